#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wsi/slide_io/manifest.hpp"

namespace wsi::eval {

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> val;

  bool operator==(const Fold&) const = default;
};

struct FoldSplit {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  bool stratified = true;
  std::vector<Fold> folds;

  bool operator==(const FoldSplit&) const = default;
};

/// Seeded k-fold partition. Stratified splits shuffle each class and deal its
/// slides round-robin, continuing the deal across classes, so every fold gets
/// floor or ceil of each class's share. Throws TooFewSlides when n < k.
FoldSplit make_folds(const slide::Manifest& manifest, std::size_t k = 10, std::uint64_t seed = 0,
                     bool stratified = true);

/// Keep ceil(fraction * n_c) training slides of each class c per fold,
/// chosen by a seeded shuffle; validation folds are untouched.
FoldSplit subsample_train(const FoldSplit& split, const slide::Manifest& manifest, double fraction,
                          std::uint64_t seed);

/// JSON {seed, k, folds: [{train: [ids], val: [ids]}]}.
void write_folds(const std::filesystem::path& path, const FoldSplit& split);
FoldSplit read_folds(const std::filesystem::path& path);

}  // namespace wsi::eval
