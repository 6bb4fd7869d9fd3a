#include "wsi/evaluation/folds.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "json.hpp"
#include "wsi/error.hpp"
#include "wsi/rng.hpp"

namespace wsi::eval {

FoldSplit make_folds(const slide::Manifest& manifest, std::size_t k, std::uint64_t seed, bool stratified) {
  const std::size_t n = manifest.entries.size();
  if (k < 2) fail(ErrorCode::InvalidConfig, "need at least 2 folds");
  if (n < k) fail(ErrorCode::TooFewSlides, std::to_string(n) + " slides for " + std::to_string(k) + " folds");

  // Groups in class-index order (one group when not stratified), each shuffled.
  std::map<int, std::vector<std::string>> groups;
  for (const auto& e : manifest.entries) groups[stratified ? e.label_index : 0].push_back(e.slide_id);
  Rng rng(mix_seed(seed, 0xf01d));
  std::vector<std::vector<std::string>> val(k);
  std::size_t next = 0;
  for (auto& [label, ids] : groups) {
    rng.shuffle(ids);
    for (const auto& id : ids) {
      val[next].push_back(id);
      next = (next + 1) % k;
    }
  }

  FoldSplit split;
  split.k = k;
  split.seed = seed;
  split.stratified = stratified;
  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    fold.val = val[f];
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) fold.train.insert(fold.train.end(), val[g].begin(), val[g].end());
    split.folds.push_back(std::move(fold));
  }
  return split;
}

FoldSplit subsample_train(const FoldSplit& split, const slide::Manifest& manifest, double fraction,
                          std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) fail(ErrorCode::InvalidConfig, "training fraction must lie in (0, 1]");
  if (fraction == 1.0) return split;
  std::unordered_map<std::string, int> label_of;
  for (const auto& e : manifest.entries) label_of[e.slide_id] = e.label_index;

  FoldSplit out = split;
  for (std::size_t f = 0; f < out.folds.size(); ++f) {
    Rng rng(mix_seed(seed, 0x5ab + f));
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& id : split.folds[f].train) {
      const auto it = label_of.find(id);
      if (it == label_of.end()) fail(ErrorCode::BadManifest, "fold mentions unknown slide " + id);
      by_class[it->second].push_back(id);
    }
    std::vector<std::string> kept;
    for (auto& [label, ids] : by_class) {
      rng.shuffle(ids);
      const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size()) - 1e-12));
      kept.insert(kept.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(keep, ids.size())));
    }
    out.folds[f].train = std::move(kept);
  }
  return out;
}

void write_folds(const std::filesystem::path& path, const FoldSplit& split) {
  nlohmann::json j;
  j["seed"] = split.seed;
  j["k"] = split.k;
  j["stratified"] = split.stratified;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : split.folds) j["folds"].push_back({{"train", f.train}, {"val", f.val}});
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

FoldSplit read_folds(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    FoldSplit split;
    split.seed = j.at("seed").get<std::uint64_t>();
    split.k = j.at("k").get<std::size_t>();
    split.stratified = j.value("stratified", true);
    for (const auto& f : j.at("folds"))
      split.folds.push_back({f.at("train").get<std::vector<std::string>>(), f.at("val").get<std::vector<std::string>>()});
    return split;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace wsi::eval
