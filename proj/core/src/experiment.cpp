#include "mrsgd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mrsgd/checkpoint.hpp"
#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{
      "seed",           "epoch",         "micro_step",   "train_loss",     "acc_train",
      "acc_test",       "acc_clean",     "acc_patch_only", "acc_augmented", "grad_norm_sq",
      "forward_visits", "backward_visits", "flops"};
  return cols;
}

std::string metrics_header() {
  std::string out;
  for (const auto& c : metrics_columns()) out += (out.empty() ? "" : ",") + c;
  return out + "\n";
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string out = std::to_string(r.seed) + "," + std::to_string(r.epoch) + "," + std::to_string(r.micro_step);
  for (const auto* v : {&r.train_loss, &r.acc_train, &r.acc_test, &r.acc_clean, &r.acc_patch_only, &r.acc_augmented,
                        &r.grad_norm_sq}) {
    out += "," + format_optional(*v);
  }
  out += "," + std::to_string(r.counters.forward_layer_visits) + "," +
         std::to_string(r.counters.backward_layer_visits) + "," + std::to_string(r.counters.flops);
  return out + "\n";
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + "\n" != metrics_header()) throw FormatError("metrics: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != metrics_columns().size()) throw FormatError("metrics: wrong field count");
    MetricsRow r;
    r.seed = std::stoull(f[0]);
    r.epoch = std::stoull(f[1]);
    r.micro_step = std::stoull(f[2]);
    r.train_loss = parse_optional(f[3]);
    r.acc_train = parse_optional(f[4]);
    r.acc_test = parse_optional(f[5]);
    r.acc_clean = parse_optional(f[6]);
    r.acc_patch_only = parse_optional(f[7]);
    r.acc_augmented = parse_optional(f[8]);
    r.grad_norm_sq = parse_optional(f[9]);
    r.counters = {std::stoull(f[10]), std::stoull(f[11]), std::stoull(f[12])};
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::filesystem::path mnist_directory(const DataConfig& cfg) {
  if (!cfg.mnist_dir.empty()) return cfg.mnist_dir;
  if (const char* env = std::getenv("MRSGD_MNIST_DIR"); env != nullptr && *env != '\0') return env;
  return "data/mnist";
}

std::vector<std::size_t> input_shape_for(const DataConfig& cfg) {
  if (cfg.kind == "spiral") return {2};
  if (cfg.kind == "mnist") return {784};
  return {cfg.blobs.side * cfg.blobs.side};
}

std::size_t classes_for(const DataConfig& cfg) { return cfg.kind == "mnist" ? 10 : 2; }

namespace {

Dataset first_rows(const Dataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  std::vector<std::size_t> idx(limit);
  for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
  return ds.subset(idx);
}

}  // namespace

Datasets build_datasets(const DataConfig& cfg) {
  Datasets out;
  if (cfg.kind == "spiral") {
    out.train = gen_spiral(cfg.turns, cfg.train_per_class, cfg.noise, RngStream(cfg.seed, 1));
    out.evals["test"] = gen_spiral(cfg.turns, cfg.test_per_class, cfg.noise, RngStream(cfg.seed, 2));
  } else if (cfg.kind == "mnist") {
    const auto dir = mnist_directory(cfg);
    out.train = first_rows(load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                           cfg.train_limit);
    out.evals["test"] =
        first_rows(load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"), cfg.test_limit);
  } else if (cfg.kind == "patch") {
    PatchSpec spec = cfg.patch;
    spec.image_side = cfg.blobs.side;
    spec.class_offsets = sample_class_offsets(2, spec.patch_side, RngStream(cfg.seed, 12));
    const Dataset base_train = gen_blob_images(cfg.blobs, cfg.patch_train, RngStream(cfg.seed, 10));
    const Dataset base_test = gen_blob_images(cfg.blobs, cfg.patch_test, RngStream(cfg.seed, 11));
    out.train = gen_patch_dataset(spec, &base_train, cfg.patch_train, 2, RngStream(cfg.seed, 13));
    PatchSpec only = spec;
    only.fraction_none = 0.0;
    only.fraction_patch_only = 1.0;
    only.fraction_mixed = 0.0;
    out.evals["clean"] = base_test;
    out.evals["patch_only"] = gen_patch_dataset(only, nullptr, cfg.patch_test, 2, RngStream(cfg.seed, 14));
    out.evals["augmented"] = gen_patch_dataset(spec, &base_test, cfg.patch_test, 2, RngStream(cfg.seed, 15));
  } else {
    throw FormatError("config: data.kind: unknown kind '" + cfg.kind + "'");
  }
  out.train.validate();
  for (const auto& [name, ds] : out.evals) ds.validate();
  return out;
}

Network build_network(const ExperimentConfig& cfg, RngStream init) {
  std::vector<std::size_t> shape = input_shape_for(cfg.data);
  std::vector<LayerSpec> specs;
  if (!cfg.model.conv.empty()) {
    shape = {cfg.data.blobs.side, cfg.data.blobs.side, 1};
    for (const auto& [channels, kernel] : cfg.model.conv) {
      specs.push_back({LayerKind::conv, channels, kernel, cfg.model.activation});
    }
  }
  for (std::size_t width : cfg.model.hidden) specs.push_back({LayerKind::dense, width, 0, cfg.model.activation});
  const Activation out = cfg.model.loss == LossKind::cross_entropy ? Activation::softmax : Activation::identity;
  specs.push_back({LayerKind::dense, classes_for(cfg.data), 0, out});
  return Network(shape, specs, cfg.model.bias, init);
}

Partition build_partition(const ExperimentConfig& cfg, const Network& net, RngStream& rng) {
  const PartitionConfig& p = cfg.partition;
  switch (p.mode) {
    case PartitionMode::all_fast: return Partition::all_fast(net.layout());
    case PartitionMode::layerwise: return layerwise(net, p.fast_layers);
    case PartitionMode::bias_slow: return bias_slow(net, p.bias_variant);
    case PartitionMode::random_subset:
      return sample_random_subset(net, p.probabilities, rng, cfg.optimizer.k, p.include_biases);
    case PartitionMode::multi_tier: return multi_tier(net, p.groups, p.ratios);
  }
  throw ContractError("unknown partition mode");
}

Evaluation evaluate(Network& net, LossKind loss, const Dataset& ds) {
  constexpr std::size_t chunk = 2000;
  const std::size_t n = ds.size();
  double loss_sum = 0.0, correct = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Batch b = make_batch(ds, idx);
    const Tensor out = net.forward(b.inputs);
    const double rows = static_cast<double>(end - start);
    loss_sum += loss_value(loss, out, b.targets) * rows;
    correct += accuracy(out, std::span<const std::int64_t>(ds.labels).subspan(start, end - start)) * rows;
  }
  net.clear_cache();
  return {loss_sum / static_cast<double>(n), correct / static_cast<double>(n)};
}

namespace {

double full_gradient_norm_sq(Network& net, LossKind loss, const Dataset& ds) {
  constexpr std::size_t chunk = 2000;
  const std::size_t n = ds.size();
  std::vector<Tensor> total;
  for (const Tensor& p : net.parameters()) total.push_back(Tensor::zeros_like(p));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Batch b = make_batch(ds, idx);
    net.forward(b.inputs);
    const GradientMap g = net.backward_full(loss, b.targets);
    const double w = static_cast<double>(end - start) / static_cast<double>(n);
    for (const auto& [key, grad] : g) axpy(w, grad, total[key.block_index()]);
  }
  net.clear_cache();
  double s = 0.0;
  for (const Tensor& t : total) s += squared_norm(t.values());
  return s;
}

}  // namespace

SeedRun train_seed(const ExperimentConfig& cfg, const Datasets& data, std::uint64_t seed,
                   const std::filesystem::path* checkpoint) {
  cfg.validate();
  const LossKind loss = cfg.model.loss;
  RngStream root(seed, 0);
  Network net = build_network(cfg, root.child(1));
  if (net.input_size() != data.train.features()) throw DimensionError("model input width differs from the data");
  MinibatchIterator batches(data.train.size(), std::min(cfg.train.batch_size, data.train.size()), root.child(2));
  OptState state = OptState::zeros(net.layout(), root.child(3));
  Partition partition = build_partition(cfg, net, state.rng);
  NetworkObjective obj(net, loss);

  std::optional<Network> twin;
  OptState twin_state;
  if (cfg.algorithm == Algorithm::composite) {
    twin = net;
    twin_state = OptState::zeros(net.layout(), root.child(4));
  }
  std::optional<NetworkObjective> twin_obj;
  if (twin) twin_obj.emplace(*twin, loss);

  const std::size_t cycle = cfg.cycle_length();
  const std::size_t cycles = (batches.batches_per_epoch() + cycle - 1) / cycle;
  std::vector<Batch> buffer(cycle);

  SeedRun run;
  run.seed = seed;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const double factor = cfg.train.linear_decay ? linear_decay(1.0, epoch - 1, cfg.train.epochs) : 1.0;
    MultirateConfig oc = cfg.optimizer;
    oc.h *= factor;
    if (oc.slow_stepsize) *oc.slow_stepsize *= factor;

    for (std::size_t c = 0; c < cycles; ++c) {
      for (Batch& b : buffer) b = make_batch(data.train, batches.next());
      switch (cfg.algorithm) {
        case Algorithm::vanilla: vanilla_step(obj, state, buffer[0], oc); break;
        case Algorithm::multirate:
          if (oc.weight_decay.empty()) {
            macro_step(obj, state, partition, oc, buffer);
          } else {
            macro_step_wd(obj, state, partition, oc, buffer);
          }
          break;
        case Algorithm::random_subset: random_subset_cycle(obj, state, partition, oc, buffer); break;
        case Algorithm::masked: masked_step(obj, state, partition, oc, buffer[0]); break;
        case Algorithm::composite:
          composite_average_step(obj, *twin_obj, state, twin_state, cfg.h_fast * factor, cfg.h_slow * factor,
                                 oc.momentum, buffer);
          break;
        case Algorithm::noise: noise_step(obj, state, partition, oc, buffer[0]); break;
      }
    }

    MetricsRow row;
    row.seed = seed;
    row.epoch = epoch;
    row.micro_step = state.micro_step;
    if (cfg.train.eval_train) {
      const Evaluation e = evaluate(net, loss, data.train);
      row.train_loss = e.loss;
      row.acc_train = e.accuracy;
    }
    for (const auto& [name, ds] : data.evals) {
      const double acc = evaluate(net, loss, ds).accuracy;
      if (name == "test") row.acc_test = acc;
      if (name == "clean") row.acc_clean = acc;
      if (name == "patch_only") row.acc_patch_only = acc;
      if (name == "augmented") row.acc_augmented = acc;
    }
    if (cfg.train.track_grad_norm) row.grad_norm_sq = full_gradient_norm_sq(net, loss, data.train);
    row.counters = state.counters;
    if (twin) row.counters += twin_state.counters;
    run.rows.push_back(row);
  }
  if (checkpoint != nullptr) save_checkpoint(*checkpoint, net, &state, &partition);
  return run;
}

// ---------------------------------------------------------------------------

std::string Summary::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["seeds"] = seeds;
  j["epochs"] = epochs;
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [key, s] : metrics) m[key] = {{"mean", s.mean}, {"min", s.min}, {"max", s.max}};
  j["metrics"] = m;
  return j.dump(2) + "\n";
}

Summary summarize(const std::string& name, const std::vector<SeedRun>& runs) {
  Summary s;
  s.name = name;
  for (const auto& r : runs) s.seeds.push_back(r.seed);
  if (runs.empty() || runs.front().rows.empty()) return s;
  s.epochs = runs.front().rows.size();
  using Getter = std::optional<double> MetricsRow::*;
  const std::vector<std::pair<std::string, Getter>> fields{
      {"train_loss", &MetricsRow::train_loss},         {"acc_train", &MetricsRow::acc_train},
      {"acc_test", &MetricsRow::acc_test},             {"acc_clean", &MetricsRow::acc_clean},
      {"acc_patch_only", &MetricsRow::acc_patch_only}, {"acc_augmented", &MetricsRow::acc_augmented},
      {"grad_norm_sq", &MetricsRow::grad_norm_sq}};
  for (const auto& [field, get] : fields) {
    const bool lower_better = field == "train_loss" || field == "grad_norm_sq";
    std::vector<double> finals, bests;
    bool complete = true;
    for (const auto& r : runs) {
      if (r.rows.empty() || !(r.rows.back().*get)) {
        complete = false;
        break;
      }
      finals.push_back(*(r.rows.back().*get));
      double best = *(r.rows.front().*get);
      for (const auto& row : r.rows) {
        if (!(row.*get)) continue;
        best = lower_better ? std::min(best, *(row.*get)) : std::max(best, *(row.*get));
      }
      bests.push_back(best);
    }
    if (!complete) continue;
    auto stats = [](const std::vector<double>& v) {
      MetricStats st;
      double sum = 0.0;
      for (double x : v) sum += x;
      st.mean = sum / static_cast<double>(v.size());
      st.min = *std::min_element(v.begin(), v.end());
      st.max = *std::max_element(v.begin(), v.end());
      return st;
    };
    s.metrics["final_" + field] = stats(finals);
    s.metrics["best_" + field] = stats(bests);
  }
  return s;
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, const Datasets* data) {
  cfg.validate();
  std::optional<Datasets> owned;
  if (data == nullptr) {
    owned = build_datasets(cfg.data);
    data = &*owned;
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  RunResult result;
  for (std::uint64_t seed : cfg.train.seeds) {
    const std::filesystem::path ck = out_dir / ("checkpoint_seed" + std::to_string(seed) + ".bin");
    const bool save = cfg.train.checkpoint && !out_dir.empty();
    SeedRun run = train_seed(cfg, *data, seed, save ? &ck : nullptr);
    if (!out_dir.empty()) {
      std::string csv = metrics_header();
      for (const auto& row : run.rows) csv += format_metrics_row(row);
      write_text(out_dir / ("metrics_seed" + std::to_string(seed) + ".csv"), csv);
    }
    result.runs.push_back(std::move(run));
  }
  result.summary = summarize(cfg.name, result.runs);
  if (!out_dir.empty()) write_text(out_dir / "summary.json", result.summary.to_json());
  return result;
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::optional<std::string>& out_override) {
  if (out_override && !out_override->empty()) return *out_override;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("MRSGD_OUTPUT_ROOT"); env != nullptr && *env != '\0') {
    return std::filesystem::path(env) / cfg.name;
  }
  return std::filesystem::path("runs") / cfg.name;
}

namespace {

std::string point_label(const std::vector<std::pair<std::string, std::string>>& assign) {
  std::string out;
  for (const auto& [k, v] : assign) {
    if (!out.empty()) out += "__";
    out += k + "=" + v;
  }
  for (char& c : out) {
    if (c == '/' || c == ' ' || c == ',' || c == ';' || c == '|') c = '-';
  }
  return out;
}

}  // namespace

std::size_t run_config(const ConfigMap& map, const std::optional<std::uint64_t>& seed_override,
                       const std::optional<std::string>& out_override) {
  const auto points = map.expand_sweeps();
  const bool sweep = points.size() > 1 || !points.front().first.empty();
  nlohmann::ordered_json sweep_json = nlohmann::ordered_json::array();
  std::filesystem::path root;
  for (const auto& [assign, point] : points) {
    ExperimentConfig cfg = ExperimentConfig::from_map(point);
    if (seed_override) cfg.train.seeds = {*seed_override};
    root = resolve_output_dir(cfg, out_override);
    const std::filesystem::path dir = sweep ? root / point_label(assign) : root;
    const RunResult r = run_experiment(cfg, dir);
    if (sweep) {
      nlohmann::ordered_json p = nlohmann::ordered_json::object();
      for (const auto& [k, v] : assign) p[k] = v;
      sweep_json.push_back({{"point", p}, {"summary", nlohmann::ordered_json::parse(r.summary.to_json())}});
    }
  }
  if (sweep) write_text(root / "sweep_summary.json", sweep_json.dump(2) + "\n");
  return points.size();
}

// ---------------------------------------------------------------------------

std::string GradCheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["max_relative_error"] = max_relative_error;
  j["coordinates"] = coordinates;
  j["tolerance"] = tolerance;
  j["passed"] = passed;
  return j.dump(2);
}

GradCheckReport gradient_check(Network& net, LossKind loss, const Batch& batch, double eps,
                               std::size_t max_coordinates) {
  net.forward(batch.inputs);
  const GradientMap grads = net.backward_full(loss, batch.targets);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t b = 0; b < net.parameters().size(); ++b) {
    for (std::size_t j = 0; j < net.parameters()[b].size(); ++j) coords.emplace_back(b, j);
  }
  std::vector<std::pair<std::size_t, std::size_t>> chosen = coords;
  if (max_coordinates > 0 && coords.size() > max_coordinates) {
    chosen.clear();
    for (std::size_t i = 0; i < max_coordinates; ++i) chosen.push_back(coords[i * coords.size() / max_coordinates]);
  }
  const ParamLayout layout = net.layout();
  GradCheckReport report;
  for (const auto& [b, j] : chosen) {
    Tensor& block = net.parameters()[b];
    const double saved = block[j];
    block[j] = saved + eps;
    const double up = net.loss_eval(loss, batch.inputs, batch.targets);
    block[j] = saved - eps;
    const double down = net.loss_eval(loss, batch.inputs, batch.targets);
    block[j] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grads.at(layout[b].key)[j];
    report.max_relative_error = std::max(report.max_relative_error, std::abs(analytic - numeric) / (1.0 + std::abs(analytic)));
  }
  net.clear_cache();
  report.coordinates = chosen.size();
  report.passed = report.max_relative_error <= report.tolerance;
  return report;
}

GradCheckReport gradcheck_config(const ConfigMap& map) {
  const ExperimentConfig cfg = ExperimentConfig::from_map(map);
  RngStream root(cfg.train.seeds.front(), 0);
  Network net = build_network(cfg, root.child(1));
  const std::size_t rows = map.integer("gradcheck.batch", 4);
  RngStream data = root.child(5);
  Tensor x = gauss(data, rows * net.input_size(), 0.0, 1.0).reshaped({rows, net.input_size()});
  std::vector<std::int64_t> labels(rows);
  for (auto& y : labels) y = static_cast<std::int64_t>(data.uniform_index(net.output_size()));
  const Batch batch{std::move(x), one_hot(labels, net.output_size())};
  GradCheckReport r = gradient_check(net, cfg.model.loss, batch, map.real("gradcheck.eps", 1e-5),
                                     map.integer("gradcheck.max_coords", 0));
  r.tolerance = map.real("gradcheck.tolerance", 1e-5);
  r.passed = r.max_relative_error <= r.tolerance;
  return r;
}

BoundReport boundcheck_config(const ConfigMap& map) {
  for (const auto& [key, value] : map.values()) {
    static const std::set<std::string> known{"bound.n",     "bound.d", "bound.lambda", "bound.h",
                                             "bound.k",     "bound.T", "bound.seeds",  "bound.data_seed",
                                             "bound.fstar_steps", "experiment.name", "output.dir"};
    if (!known.contains(key)) throw FormatError("config: unknown key '" + key + "' for boundcheck");
  }
  const std::uint64_t data_seed = map.integer("bound.data_seed", 0);
  const LogisticProblem problem = LogisticProblem::synthetic(map.integer("bound.n", 500), map.integer("bound.d", 20),
                                                             map.real("bound.lambda", 0.01), RngStream(data_seed, 20));
  RngStream start(data_seed, 21);
  const Tensor theta0 = gauss(start, problem.dimension(), 0.0, 1.0);
  BoundCheckConfig bc;
  bc.h = map.real("bound.h", bc.h);
  bc.k = map.integer("bound.k", bc.k);
  bc.T = map.integer("bound.T", bc.T);
  bc.fstar_steps = map.integer("bound.fstar_steps", bc.fstar_steps);
  return verify_bound(problem, theta0.values(), bc, map.integers("bound.seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

std::vector<std::filesystem::path> gendata_config(const ConfigMap& map, const std::filesystem::path& out_dir) {
  const ExperimentConfig cfg = ExperimentConfig::from_map(map);
  const Datasets data = build_datasets(cfg.data);
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written{out_dir / "train.bin"};
  write_dataset(written.back(), data.train);
  for (const auto& [name, ds] : data.evals) {
    written.push_back(out_dir / (name + ".bin"));
    write_dataset(written.back(), ds);
  }
  return written;
}

}  // namespace mrsgd
