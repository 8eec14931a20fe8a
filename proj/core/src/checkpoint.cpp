#include "mrsgd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

constexpr char magic[8] = {'M', 'R', 'S', 'G', 'D', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }
  void tensors(const std::vector<Tensor>& ts) {
    u64(ts.size());
    for (const Tensor& t : ts) tensor(t);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint8_t u8() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("checkpoint: truncated file");
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t count(std::uint64_t limit = std::uint64_t{1} << 32) {
    const std::uint64_t n = u64();
    if (n > limit) throw FormatError("checkpoint: implausible length field");
    return n;
  }
  std::string str() {
    std::string s(count(1 << 20), '\0');
    if (!in_.read(s.data(), static_cast<std::streamsize>(s.size()))) throw FormatError("checkpoint: truncated string");
    return s;
  }
  Tensor tensor() {
    Tensor::Shape shape(count(8));
    for (auto& d : shape) d = count();
    Tensor t(shape);
    for (double& v : t.values()) v = f64();
    return t;
  }
  std::vector<Tensor> tensors() {
    std::vector<Tensor> ts(count(1 << 16));
    for (auto& t : ts) t = tensor();
    return ts;
  }

 private:
  std::istream& in_;
};

void write_network(Writer& w, const Network& net) {
  w.u64(net.input_shape().size());
  for (std::size_t d : net.input_shape()) w.u64(d);
  w.u8(net.has_bias() ? 1 : 0);
  const auto specs = net.specs();
  w.u64(specs.size());
  for (const LayerSpec& s : specs) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u64(s.units);
    w.u64(s.kernel);
    w.u8(static_cast<std::uint8_t>(s.activation));
  }
  w.tensors(net.parameters());
}

Network read_network(Reader& r) {
  std::vector<std::size_t> input_shape(r.count(3));
  for (auto& d : input_shape) d = r.count();
  const bool with_bias = r.u8() != 0;
  std::vector<LayerSpec> specs(r.count(1 << 12));
  for (LayerSpec& s : specs) {
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::conv)) throw FormatError("checkpoint: unknown layer kind");
    s.kind = static_cast<LayerKind>(kind);
    s.units = r.count();
    s.kernel = r.count();
    const std::uint8_t act = r.u8();
    if (act > static_cast<std::uint8_t>(Activation::softmax)) throw FormatError("checkpoint: unknown activation");
    s.activation = static_cast<Activation>(act);
  }
  Network net(input_shape, specs, with_bias, RngStream{});
  std::vector<Tensor> params = r.tensors();
  if (params.size() != net.parameters().size()) throw FormatError("checkpoint: parameter block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].shape() != net.parameters()[b].shape()) throw FormatError("checkpoint: parameter shape mismatch");
  }
  net.parameters() = std::move(params);
  return net;
}

void write_state(Writer& w, const OptState& s) {
  w.u64(s.micro_step);
  w.u64(s.macro_step);
  w.u64(s.rng.seed());
  w.u64(s.rng.stream_id());
  w.u64(s.rng.counter());
  w.u64(s.counters.forward_layer_visits);
  w.u64(s.counters.backward_layer_visits);
  w.u64(s.counters.flops);
  w.tensors(s.momenta);
  w.u8(s.stash ? 1 : 0);
  if (s.stash) w.tensors(*s.stash);
  w.u64(s.warnings.size());
  for (const auto& m : s.warnings) w.str(m);
}

OptState read_state(Reader& r) {
  OptState s;
  s.micro_step = r.u64();
  s.macro_step = r.u64();
  const std::uint64_t seed = r.u64(), stream = r.u64(), counter = r.u64();
  s.rng = RngStream(seed, stream, counter);
  s.counters.forward_layer_visits = r.u64();
  s.counters.backward_layer_visits = r.u64();
  s.counters.flops = r.u64();
  s.momenta = r.tensors();
  if (r.u8() != 0) s.stash = r.tensors();
  s.warnings.resize(r.count(1 << 16));
  for (auto& m : s.warnings) m = r.str();
  return s;
}

void write_partition(Writer& w, const Partition& p) {
  w.u8(static_cast<std::uint8_t>(p.mode()));
  w.u64(p.tier_count());
  w.u64(p.ratios().size());
  for (std::size_t k : p.ratios()) w.u64(k);
  const ParamLayout& layout = p.layout();
  w.u64(layout.size());
  for (std::size_t b = 0; b < layout.size(); ++b) {
    w.u64(layout[b].key.layer);
    w.u8(static_cast<std::uint8_t>(layout[b].key.role));
    w.u64(layout[b].size);
    for (std::uint8_t t : p.block_tiers(b)) w.u8(t);
  }
  const auto& rs = p.random_subset();
  w.u8(rs ? 1 : 0);
  if (rs) {
    w.u64(rs->probabilities.size());
    for (double q : rs->probabilities) w.f64(q);
    w.u8(rs->include_biases ? 1 : 0);
    w.u64(rs->resample_period);
  }
}

Partition read_partition(Reader& r) {
  const std::uint8_t mode = r.u8();
  if (mode > static_cast<std::uint8_t>(PartitionMode::multi_tier)) throw FormatError("checkpoint: unknown partition mode");
  const std::size_t tier_count = r.count(255);
  std::vector<std::size_t> ratios(r.count(255));
  for (auto& k : ratios) k = r.count();
  ParamLayout layout(r.count(1 << 16));
  std::vector<std::vector<std::uint8_t>> tiers;
  for (BlockInfo& b : layout) {
    b.key.layer = r.count();
    const std::uint8_t role = r.u8();
    if (role > 1) throw FormatError("checkpoint: unknown parameter role");
    b.key.role = static_cast<ParamRole>(role);
    b.size = r.count();
    std::vector<std::uint8_t> t(b.size);
    for (auto& v : t) v = r.u8();
    tiers.push_back(std::move(t));
  }
  Partition p(layout, std::move(tiers), tier_count, static_cast<PartitionMode>(mode));
  p.set_ratios(ratios);
  if (r.u8() != 0) {
    RandomSubsetSpec spec;
    spec.probabilities.resize(r.count(1 << 12));
    for (double& q : spec.probabilities) q = r.f64();
    spec.include_biases = r.u8() != 0;
    spec.resample_period = r.count();
    p.set_random_subset(std::move(spec));
  }
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net, const OptState* state,
                     const Partition* partition) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(magic, sizeof magic);
  Writer w(out);
  w.u32(checkpoint_version);
  write_network(w, net);
  w.u8(state ? 1 : 0);
  if (state) write_state(w, *state);
  w.u8(partition ? 1 : 0);
  if (partition) write_partition(w, *partition);
  if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char head[8];
  if (!in.read(head, sizeof head) || std::memcmp(head, magic, sizeof magic) != 0) {
    throw FormatError("checkpoint: bad magic in " + path.string());
  }
  Reader r(in);
  const std::uint32_t version = r.u32();
  if (version != checkpoint_version) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck{read_network(r), std::nullopt, std::nullopt};
  if (r.u8() != 0) ck.state = read_state(r);
  if (r.u8() != 0) ck.partition = read_partition(r);
  return ck;
}

}  // namespace mrsgd
