#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrsgd/network.hpp"
#include "mrsgd/optimizer.hpp"
#include "mrsgd/rng.hpp"
#include "mrsgd/tensor.hpp"

namespace mrsgd {

enum class PatchKind : std::uint8_t { none = 0, patch_only = 1, mixed = 2 };

struct Dataset {
  Tensor inputs;                     // N x d
  std::vector<std::int64_t> labels;  // length N, in [0, classes)
  std::size_t classes = 0;
  std::string provenance = "synthetic";
  std::vector<std::size_t> sample_shape;  // {d} or {H, W, C}
  std::vector<PatchKind> kinds;           // patch datasets only
  std::vector<double> patch_z;            // patch datasets only; 0 where no patch

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.rank() == 2 ? inputs.cols() : 0; }
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
  /// Indices whose patch kind equals `kind`.
  std::vector<std::size_t> indices_of(PatchKind kind) const;
};

/// Two interleaved spiral arms. For t uniform in (0, 1]: r = t, phi = 2 pi turns t;
/// class 0 sits at r(cos phi, sin phi), class 1 at the negated point, each with
/// independent isotropic Gaussian noise. Samples alternate class 0, class 1.
Dataset gen_spiral(double turns, std::size_t n_per_class, double noise_std, RngStream rng);

/// Smooth two-class single-channel images. Class 0 carries its bumps in the
/// upper half of the image, class 1 in the lower half; a distractor bump and
/// pixel noise are added to every image.
struct BlobSpec {
  std::size_t side = 16;
  std::size_t bumps = 2;
  double width = 1.5;
  double amplitude = 1.0;
  std::size_t distractors = 1;
  double pixel_noise = 0.3;
};
Dataset gen_blob_images(const BlobSpec& spec, std::size_t n, RngStream rng);

struct PatchSpec {
  std::size_t image_side = 16;
  std::size_t patch_side = 7;
  double z_std = 1.25;
  double patch_only_scale = 1.75;
  /// Class offsets zeta_i, one patch_side^2 vector per class, entries in [-0.1, 0.1].
  std::vector<std::vector<double>> class_offsets;
  double fraction_none = 0.20;
  double fraction_patch_only = 0.16;
  double fraction_mixed = 0.64;

  void validate(std::size_t classes) const;
  /// Row/column of the patch's top-left pixel.
  std::size_t patch_origin() const { return (image_side - patch_side) / 2; }
};

/// Class offsets drawn uniform in [-0.1, 0.1].
std::vector<std::vector<double>> sample_class_offsets(std::size_t classes, std::size_t patch_side, RngStream rng);

/// Realized counts (patch-free, patch-only, mixed) = round(N * fraction), with
/// the mixed count absorbing rounding so the three sum to N.
std::array<std::size_t, 3> patch_counts(const PatchSpec& spec, std::size_t n);

/// Applies the patch recipe to the first N base images. Index blocks are
/// assigned deterministically: patch-free first, then patch-only, then mixed.
/// Patch-only images are zero except for z + s 1.75 a zeta_i on the patch,
/// mixed images get z + s zeta_i added to their patch, with z ~ N(0, z_std^2),
/// a ~ U[0, 1) and a fair sign s drawn per image. Patch-only labels are drawn
/// uniformly; the other kinds keep their base label.
Dataset gen_patch_dataset(const PatchSpec& spec, const Dataset* base, std::size_t n, std::size_t classes,
                          RngStream rng);

/// IDX image/label pair, pixels scaled to [0, 1].
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Per-epoch shuffled index batches; the last short batch is kept.
class MinibatchIterator {
 public:
  MinibatchIterator(std::size_t n, std::size_t batch_size, RngStream rng);

  std::vector<std::size_t> next();
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }
  /// True when the previous call to next() finished an epoch.
  bool epoch_finished() const { return pos_ == 0 && started_; }

 private:
  void reshuffle();

  std::size_t n_;
  std::size_t batch_size_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  bool started_ = false;
};

/// Rows `indices` of the dataset with one-hot targets.
Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);
/// The whole dataset as one batch.
Batch full_batch(const Dataset& ds);

/// Binary export: N, d, C as little-endian uint64, then N*d float64 inputs,
/// then N int64 labels.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace mrsgd
