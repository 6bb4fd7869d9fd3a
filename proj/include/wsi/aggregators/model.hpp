#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "wsi/features/feature_bag.hpp"
#include "wsi/tensor_core/nn.hpp"

namespace wsi::agg {

using nn::DType;
using nn::ParameterList;
using nn::Tensor;

/// How much global structure the slide model sees.
enum class Structure { None, Medium, Most };
/// How the level-2 encoder is initialized and trained.
enum class L2Mode { Unset, Frozen, Finetune, RandomInit };
enum class Task { Classification, Survival };

std::string to_string(Structure s);
std::string to_string(L2Mode m);
std::string to_string(Task t);
Structure structure_from_string(const std::string& s);
L2Mode l2_mode_from_string(const std::string& s);
Task task_from_string(const std::string& s);

/// Level-2 encoder hyperparameters; shared with pre-training.
struct L2EncoderConfig {
  std::size_t l1_dim = features::kL1Dim;
  std::size_t dim = 192;
  std::size_t layers = 2;
  std::size_t heads = 3;
  std::size_t mlp_ratio = 4;

  bool operator==(const L2EncoderConfig&) const = default;
};

struct ModelConfig {
  Structure structure = Structure::Medium;
  L2Mode l2_mode = L2Mode::RandomInit;
  Task task = Task::Classification;
  std::size_t l1_dim = features::kL1Dim;
  std::size_t l2_dim = 192;
  std::size_t classes = 2;
  std::size_t l2_layers = 2;
  std::size_t l2_heads = 3;
  std::size_t l3_layers = 2;
  std::size_t l3_heads = 3;
  std::size_t mlp_ratio = 4;
  /// Hidden width of the Max-MIL instance MLP.
  std::size_t instance_hidden = 256;
  std::uint64_t seed = 0;

  L2EncoderConfig l2() const { return {l1_dim, l2_dim, l2_layers, l2_heads, mlp_ratio}; }
  /// Logit count: classes for classification, 1 (risk) for survival.
  std::size_t outputs() const { return task == Task::Survival ? 1 : classes; }
  bool operator==(const ModelConfig&) const = default;
};

/// Config for a matrix cell: (layers, heads) = (2, 3) for medium and (6, 6)
/// for most; none carries no level-2 settings.
ModelConfig make_config(Structure structure, L2Mode mode, std::size_t classes, std::uint64_t seed,
                        Task task = Task::Classification);

/// Throws InvalidConfig (structure/mode combination, zero sizes) or
/// DimNotDivisibleByHeads.
void validate(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// Level-2 encoder: project present tokens, add per-slot learned positions,
/// prepend a class token, run the transformer, return the class-token state.
struct L2Encoder {
  L2EncoderConfig config;
  nn::Linear proj;
  Tensor pos;  // [256, dim]
  Tensor cls;  // [1, dim]
  nn::TransformerEncoder encoder;

  L2Encoder() = default;
  L2Encoder(const L2EncoderConfig& config, Rng& rng, DType dtype);

  /// tokens[n, l1_dim] occupying region `slots` (0..255) -> [1, dim].
  Tensor encode(const Tensor& tokens, const std::vector<std::size_t>& slots, Rng* train_rng = nullptr,
                nn::AttentionMaps* maps = nullptr) const;
  /// Throws EmptyRegion when no slot is present.
  Tensor operator()(const features::RegionGrid& region, DType dtype, Rng* train_rng = nullptr) const;

  /// Names are prefixed with "l2".
  void collect(ParameterList& out) const;
  ParameterList parameters() const;
  L2Encoder deep_copy() const;
};

/// Level-3 transformer over region embeddings with a class token and no
/// positions. The class token's own key is masked out, so every token attends
/// only to regions and the output depends on the set of region vectors alone.
struct L3Classifier {
  Tensor cls;  // [1, dim]
  nn::TransformerEncoder encoder;
  nn::Linear head;

  L3Classifier() = default;
  L3Classifier(std::size_t dim, std::size_t layers, std::size_t heads, std::size_t mlp_ratio, std::size_t outputs,
               Rng& rng, DType dtype);

  /// regions[m, dim] -> logits [1, outputs]. Throws EmptyInput for m == 0.
  Tensor operator()(const Tensor& regions, Rng* train_rng = nullptr, nn::AttentionMaps* maps = nullptr) const;
  void collect(ParameterList& out) const;
};

/// Instance MLP scored per patch; the slide takes the logits of the single
/// instance chosen by select_instance.
struct MaxMilHead {
  nn::FeedForward mlp;

  MaxMilHead() = default;
  MaxMilHead(std::size_t in, std::size_t hidden, std::size_t outputs, Rng& rng, DType dtype);

  void collect(ParameterList& out) const;
};

/// Index of the winning instance given per-instance logits rows (ordered by
/// (y, x)); the earliest row wins ties. Two classes: highest positive-class
/// probability. More classes: highest probability of any class. A single
/// output (risk): largest value.
std::size_t select_instance(const std::vector<double>& logits, std::size_t rows, std::size_t cols);

/// Slide inputs in model-ready form, prepared once per slide.
struct SlideData {
  std::string slide_id;
  /// Entries sorted by (y, x).
  features::FeatureBag bag;
  Tensor instances;  // [n, l1_dim]
  std::vector<features::RegionGrid> regions;
  std::vector<Tensor> region_tokens;  // [present, l1_dim] per region
  std::vector<std::vector<std::size_t>> region_slots;
};

/// Throws EmptyBag for a bag without entries.
SlideData prepare_slide(features::FeatureBag bag, DType dtype);

struct SlidePrediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  /// Max-MIL only: grid coordinates of the selected instance.
  std::optional<std::pair<std::int32_t, std::int32_t>> selected_instance;
  /// Transformer models: class-token attention per region in the last level-3
  /// block, averaged over heads.
  std::vector<double> region_attention;
};

struct SurvivalPrediction {
  double risk = 0;
};

struct ForwardOutput {
  Tensor logits;  // [1, outputs]
  std::optional<std::size_t> selected;
  std::vector<double> region_attention;
};

class SlideModel {
 public:
  const ModelConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }

  /// Forward one slide. `region_cache`, when given, supplies precomputed
  /// level-2 embeddings [regions, l2_dim] (valid for a frozen encoder).
  ForwardOutput forward(const SlideData& slide, Rng* train_rng = nullptr, const Tensor* region_cache = nullptr,
                        bool want_attention = false) const;

  /// Level-2 embeddings of all regions [regions, l2_dim].
  Tensor encode_regions(const SlideData& slide, Rng* train_rng = nullptr) const;

  SlidePrediction predict(const SlideData& slide) const;
  SurvivalPrediction predict_risk(const SlideData& slide) const;

  /// All parameters with names ("l2.*", "l3.*", "mil.*").
  ParameterList parameters() const;
  /// Parameters the optimizer should update.
  std::vector<Tensor> trainable_parameters() const;
  ParameterList l2_parameters() const;

  bool has_l2() const { return config_.structure != Structure::None; }
  const L2Encoder& l2() const { return l2_; }

 private:
  friend SlideModel build_model(const ModelConfig&, const std::optional<ParameterList>&, DType);
  friend SlideModel load_model(const std::filesystem::path&);
  SlideModel(const ModelConfig& config, DType dtype);

  ModelConfig config_;
  DType dtype_ = DType::f32;
  L2Encoder l2_;
  L3Classifier l3_;
  MaxMilHead mil_;
};

/// Build the model for `config`. Frozen and finetune modes load the level-2
/// encoder from `l2_checkpoint` ("l2.*" parameters); frozen marks them as not
/// requiring gradients. Throws MissingCheckpoint or CheckpointShapeMismatch.
SlideModel build_model(const ModelConfig& config, const std::optional<ParameterList>& l2_checkpoint = std::nullopt,
                       DType dtype = DType::f32);

/// Same, reading the checkpoint file when the mode needs one (an empty path
/// means no checkpoint).
SlideModel build_model(const ModelConfig& config, const std::filesystem::path& l2_checkpoint,
                       DType dtype = DType::f32);

/// Parameters plus a `<path>.json` sidecar holding the config.
void save_model(const std::filesystem::path& path, const SlideModel& model);
SlideModel load_model(const std::filesystem::path& path);

/// Negative Cox partial log-likelihood (Breslow ties), averaged over events.
/// `risks` is [n, 1]. Throws NoEventsInBatch.
Tensor cox_loss(const Tensor& risks, const std::vector<double>& times, const std::vector<bool>& events);

}  // namespace wsi::agg
