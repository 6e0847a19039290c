#pragma once

#include "flatmin/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flatmin {

/// Images and labels read from an IDX pair. Pixels are scaled to [0, 1].
struct IdxData {
  std::size_t rows = 0;
  std::size_t cols = 0;
  PatternMatrix pixels;  // count x (rows * cols)
  std::vector<int> labels;
};

struct Provenance {
  std::string kind;  // "idx" or "synthetic"
  std::uint64_t seed = 0;
  std::size_t teacher_hidden = 0;
  std::string detail;
};

struct Dataset {
  LabeledSet data;
  std::map<int, int> class_map;  // original label -> +-1
  Provenance provenance;
  std::optional<WeightMatrix> teacher;

  [[nodiscard]] Eigen::Index size() const { return data.size(); }
  [[nodiscard]] Eigen::Index dim() const { return data.dim(); }
};

/// Reads an IDX image file (magic 0x00000803) and label file (magic 0x00000801).
IdxData load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Lower median (middle rank, the smaller one for even counts).
double lower_median(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Keeps images of the two classes whose median lies in [median_lo, median_hi] and maps each
/// pixel to +1 if strictly above the median, -1 otherwise. classes.first -> y = +1.
Dataset median_binarize_filter(const IdxData& raw, std::pair<int, int> classes, double median_lo,
                               double median_hi);

/// Seeded uniform subsample of n_train patterns; the remainder is returned second.
/// With balanced = true, the two labels are drawn as evenly as availability allows.
std::pair<Dataset, Dataset> subsample_train(const Dataset& dataset, std::size_t n_train, Rng& rng,
                                            bool balanced = false);

/// Random normalized teacher committee (H_teacher hidden units) labelling P inputs drawn
/// uniformly from {-1, +1}^N.
Dataset synth_teacher_dataset(std::size_t n, std::size_t teacher_hidden, std::size_t p, Rng& rng);

/// Copies the listed rows of a set.
LabeledSet gather(const LabeledSet& set, const std::vector<std::size_t>& rows);

/// Seeded minibatch iterator. Each epoch is a fresh permutation sliced into ceil(P/B) batches,
/// the last possibly smaller. next() crosses epoch boundaries transparently.
class MinibatchStream {
 public:
  MinibatchStream(const LabeledSet& data, std::size_t batch_size, std::uint64_t seed);

  /// The batches of one full fresh epoch.
  std::vector<LabeledSet> epoch();

  LabeledSet next();

  [[nodiscard]] std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  [[nodiscard]] std::uint64_t batches_drawn() const { return drawn_; }

 private:
  void reshuffle();

  const LabeledSet* data_;
  std::size_t batch_size_;
  std::size_t batches_per_epoch_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
  std::uint64_t drawn_ = 0;
};

/// Binary cache container: "FMDS" magic, u32 version, u64 JSON header length, JSON header
/// (shape, provenance, class map, teacher shape), then labels as int8, patterns as float64
/// row-major, and the teacher weights as float64 when present. Little-endian.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace flatmin
