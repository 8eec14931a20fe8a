#include "mrsgd/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "mrsgd/errors.hpp"

namespace mrsgd {

void Dataset::validate() const {
  const std::size_t n = size();
  if (n == 0) throw ContractError("dataset: at least one sample required");
  if (inputs.rank() != 2 || inputs.rows() != n) throw DimensionError("dataset: inputs must be N x d");
  if (classes == 0) throw ContractError("dataset: class count must be positive");
  for (std::int64_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DomainError("dataset: label outside [0, C)");
  }
  for (double v : inputs.values()) {
    if (!std::isfinite(v)) throw DomainError("dataset: non-finite input");
  }
  if (!kinds.empty() && kinds.size() != n) throw DimensionError("dataset: kind tags must cover every sample");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  const std::size_t d = features();
  Dataset out;
  out.classes = classes;
  out.provenance = provenance;
  out.sample_shape = sample_shape;
  out.inputs = Tensor({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw DimensionError("dataset: subset index out of range");
    std::memcpy(out.inputs.data() + r * d, inputs.data() + i * d, d * sizeof(double));
    out.labels.push_back(labels[i]);
    if (!kinds.empty()) out.kinds.push_back(kinds[i]);
    if (!patch_z.empty()) out.patch_z.push_back(patch_z[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of(PatchKind kind) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == kind) out.push_back(i);
  }
  return out;
}

Dataset gen_spiral(double turns, std::size_t n_per_class, double noise_std, RngStream rng) {
  if (!(turns > 0.0)) throw DomainError("spiral: turns must be positive");
  if (n_per_class == 0) throw DomainError("spiral: need at least one point per class");
  if (!(noise_std >= 0.0)) throw DomainError("spiral: noise must be nonnegative");
  RngStream position = rng.child(1), noise = rng.child(2);
  Dataset ds;
  ds.classes = 2;
  ds.provenance = "spiral";
  ds.sample_shape = {2};
  ds.inputs = Tensor({2 * n_per_class, 2});
  for (std::size_t i = 0; i < n_per_class; ++i) {
    const double t = 1.0 - position.uniform();  // (0, 1]
    const double phi = 2.0 * std::numbers::pi * turns * t;
    const double x = t * std::cos(phi), y = t * std::sin(phi);
    double n0x = 0.0, n0y = 0.0, n1x = 0.0, n1y = 0.0;
    if (noise_std > 0.0) {
      n0x = noise_std * noise.normal();
      n0y = noise_std * noise.normal();
      n1x = noise_std * noise.normal();
      n1y = noise_std * noise.normal();
    }
    ds.inputs.at(2 * i, 0) = x + n0x;
    ds.inputs.at(2 * i, 1) = y + n0y;
    ds.inputs.at(2 * i + 1, 0) = -x + n1x;
    ds.inputs.at(2 * i + 1, 1) = -y + n1y;
    ds.labels.push_back(0);
    ds.labels.push_back(1);
  }
  return ds;
}

Dataset gen_blob_images(const BlobSpec& spec, std::size_t n, RngStream rng) {
  if (spec.side < 4) throw DomainError("blobs: image side must be at least 4");
  if (!(spec.width > 0.0) || !(spec.pixel_noise >= 0.0)) throw DomainError("blobs: width > 0 and noise >= 0 required");
  RngStream labels = rng.child(1), place = rng.child(2), noise = rng.child(3);
  const std::size_t s = spec.side;
  const double half = static_cast<double>(s) / 2.0;
  Dataset ds;
  ds.classes = 2;
  ds.provenance = "blobs";
  ds.sample_shape = {s, s, 1};
  ds.inputs = Tensor({n, s * s});
  auto add_bump = [&](double* img, double cr, double cc, double amp) {
    const double inv = 1.0 / (2.0 * spec.width * spec.width);
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t c = 0; c < s; ++c) {
        const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
        img[r * s + c] += amp * std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t y = labels.bernoulli(0.5) ? 1 : 0;
    double* img = ds.inputs.data() + i * s * s;
    for (std::size_t b = 0; b < spec.bumps; ++b) {
      const double row = (y == 0 ? 0.0 : half) + place.uniform() * half;
      const double col = place.uniform() * static_cast<double>(s);
      add_bump(img, row, col, spec.amplitude);
    }
    for (std::size_t b = 0; b < spec.distractors; ++b) {
      add_bump(img, place.uniform() * static_cast<double>(s), place.uniform() * static_cast<double>(s),
               spec.amplitude);
    }
    if (spec.pixel_noise > 0.0) {
      for (std::size_t p = 0; p < s * s; ++p) img[p] += spec.pixel_noise * noise.normal();
    }
    ds.labels.push_back(y);
  }
  return ds;
}

void PatchSpec::validate(std::size_t classes) const {
  if (patch_side == 0 || image_side < patch_side) throw DomainError("patch: need 0 < patch side <= image side");
  if (!(z_std >= 0.0)) throw DomainError("patch: z std must be nonnegative");
  for (double f : {fraction_none, fraction_patch_only, fraction_mixed}) {
    if (!(f >= 0.0 && f <= 1.0)) throw DomainError("patch: fractions must lie in [0, 1]");
  }
  if (std::abs(fraction_none + fraction_patch_only + fraction_mixed - 1.0) > 1e-9) {
    throw DomainError("patch: fractions must sum to 1");
  }
  if (class_offsets.size() != classes) throw ContractError("patch: one offset vector per class required");
  for (const auto& z : class_offsets) {
    if (z.size() != patch_side * patch_side) throw DimensionError("patch: offset vector must cover the patch");
    for (double v : z) {
      if (!(v >= -0.1 && v <= 0.1)) throw DomainError("patch: class offsets must lie in [-0.1, 0.1]");
    }
  }
}

std::vector<std::vector<double>> sample_class_offsets(std::size_t classes, std::size_t patch_side, RngStream rng) {
  std::vector<std::vector<double>> out(classes, std::vector<double>(patch_side * patch_side));
  for (auto& z : out) {
    for (double& v : z) v = -0.1 + 0.2 * rng.uniform();
  }
  return out;
}

std::array<std::size_t, 3> patch_counts(const PatchSpec& spec, std::size_t n) {
  const double nd = static_cast<double>(n);
  const auto none = static_cast<std::size_t>(std::llround(nd * spec.fraction_none));
  const auto only = static_cast<std::size_t>(std::llround(nd * spec.fraction_patch_only));
  if (none + only > n) throw DomainError("patch: fractions exceed the sample count");
  return {none, only, n - none - only};
}

Dataset gen_patch_dataset(const PatchSpec& spec, const Dataset* base, std::size_t n, std::size_t classes,
                          RngStream rng) {
  spec.validate(classes);
  const auto [n_none, n_only, n_mixed] = patch_counts(spec, n);
  const std::size_t side = spec.image_side;
  const std::size_t d = side * side;
  if (n_none + n_mixed > 0) {
    if (base == nullptr) throw ContractError("patch: base images required for patch-free or mixed samples");
    if (base->size() < n) throw ContractError("patch: fewer base images than requested samples");
    if (base->features() != d) throw DimensionError("patch: base images have the wrong size");
    if (base->classes != classes) throw ContractError("patch: base class count differs");
  }
  RngStream zs = rng.child(1), as = rng.child(2), signs = rng.child(3), labels = rng.child(4);
  Dataset ds;
  ds.classes = classes;
  ds.provenance = "patch";
  ds.sample_shape = {side, side, 1};
  ds.inputs = Tensor({n, d});
  ds.labels.resize(n);
  ds.kinds.resize(n);
  ds.patch_z.assign(n, 0.0);
  const std::size_t o = spec.patch_origin();
  const std::size_t ps = spec.patch_side;
  for (std::size_t i = 0; i < n; ++i) {
    double* img = ds.inputs.data() + i * d;
    const PatchKind kind = i < n_none ? PatchKind::none : (i < n_none + n_only ? PatchKind::patch_only : PatchKind::mixed);
    ds.kinds[i] = kind;
    if (kind != PatchKind::patch_only) {
      std::memcpy(img, base->inputs.data() + i * d, d * sizeof(double));
      ds.labels[i] = base->labels[i];
    } else {
      ds.labels[i] = static_cast<std::int64_t>(labels.uniform_index(classes));
    }
    if (kind == PatchKind::none) continue;
    const double z = spec.z_std * zs.normal();
    const double s = signs.bernoulli(0.5) ? 1.0 : -1.0;
    double scale = s;
    if (kind == PatchKind::patch_only) scale *= spec.patch_only_scale * as.uniform();
    ds.patch_z[i] = z;
    const auto& zeta = spec.class_offsets[static_cast<std::size_t>(ds.labels[i])];
    for (std::size_t r = 0; r < ps; ++r) {
      for (std::size_t c = 0; c < ps; ++c) {
        double& px = img[(o + r) * side + (o + c)];
        const double value = z + scale * zeta[r * ps + c];
        px = kind == PatchKind::patch_only ? value : px + value;
      }
    }
  }
  return ds;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  if (at + 4 > b.size()) throw FormatError("IDX: truncated header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);
  if (be32(img, 0) != 0x00000803) throw FormatError("IDX: bad image magic in " + images.string());
  if (be32(lab, 0) != 0x00000801) throw FormatError("IDX: bad label magic in " + labels.string());
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels) throw FormatError("IDX: image count differs from label count");
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) throw FormatError("IDX: truncated image data");
  if (lab.size() < 8 + n) throw FormatError("IDX: truncated label data");
  Dataset ds;
  ds.provenance = "mnist";
  ds.classes = 10;
  ds.sample_shape = {d};
  ds.inputs = Tensor({n, d});
  for (std::size_t i = 0; i < n * d; ++i) ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) throw FormatError("IDX: label outside 0..9");
    ds.labels[i] = lab[8 + i];
  }
  return ds;
}

MinibatchIterator::MinibatchIterator(std::size_t n, std::size_t batch_size, RngStream rng)
    : n_(n), batch_size_(batch_size), rng_(rng) {
  if (batch_size == 0 || batch_size > n) throw DomainError("minibatch: batch size must lie in [1, N]");
  reshuffle();
}

void MinibatchIterator::reshuffle() {
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  RngStream epoch_rng = rng_.child(epoch_);
  shuffle(order_, epoch_rng);
}

std::vector<std::size_t> MinibatchIterator::next() {
  started_ = true;
  const std::size_t end = std::min(pos_ + batch_size_, n_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  pos_ = end;
  if (pos_ == n_) {
    pos_ = 0;
    ++epoch_;
    reshuffle();
  }
  return out;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t d = ds.features();
  Batch b{Tensor({indices.size(), d}), Tensor({indices.size(), ds.classes})};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= ds.size()) throw DimensionError("batch: index out of range");
    std::memcpy(b.inputs.data() + r * d, ds.inputs.data() + i * d, d * sizeof(double));
    b.targets.at(r, static_cast<std::size_t>(ds.labels[i])) = 1.0;
  }
  return b;
}

Batch full_batch(const Dataset& ds) {
  return {ds.inputs, one_hot(ds.labels, ds.classes)};
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("dataset file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  put_u64(out, ds.size());
  put_u64(out, ds.features());
  put_u64(out, ds.classes);
  for (double v : ds.inputs.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  for (std::int64_t y : ds.labels) put_u64(out, static_cast<std::uint64_t>(y));
  if (!out) throw FormatError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::uint64_t n = get_u64(in), d = get_u64(in), c = get_u64(in);
  if (n > (std::uint64_t{1} << 32) || d > (std::uint64_t{1} << 24)) throw FormatError("dataset file: implausible header");
  Dataset ds;
  ds.classes = c;
  ds.sample_shape = {d};
  ds.inputs = Tensor({n, d});
  for (double& v : ds.inputs.values()) v = std::bit_cast<double>(get_u64(in));
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = static_cast<std::int64_t>(get_u64(in));
  ds.validate();
  return ds;
}

}  // namespace mrsgd
