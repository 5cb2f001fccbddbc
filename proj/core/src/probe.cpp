// Copyright 2026 The keyprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "keyprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "keyprobe/error.hpp"
#include "keyprobe/hash.hpp"
#include "keyprobe/optim.hpp"
#include "keyprobe/parallel.hpp"

namespace keyprobe {

ProbeArch ProbeArch::linear_probe() { return {.hidden_layers = 0, .hidden_dim = 0, .dropout = 0.0}; }

ProbeArch ProbeArch::billboard_reference() {
  return {.hidden_layers = 1, .hidden_dim = 2048, .dropout = 0.75};
}

ProbeArch ProbeArch::giantsteps_reference() {
  return {.hidden_layers = 2, .hidden_dim = 4096, .dropout = 0.99};
}

void ProbeArch::validate() const {
  if (hidden_layers < 0 || hidden_layers > 2) {
    throw UsageError("probe: hidden_layers must be 0, 1 or 2, got " + std::to_string(hidden_layers));
  }
  if (hidden_layers > 0 && hidden_dim <= 0) throw UsageError("probe: hidden_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("probe: dropout must lie in [0, 1)");
  if (input_dim <= 0 || classes <= 0) throw UsageError("probe: invalid input_dim or classes");
  if (excluded()) throw UsageError("probe: 2-layer 8192-wide MLP is excluded");
}

std::string ProbeArch::name() const {
  if (hidden_layers == 0) return "linear";
  std::ostringstream os;
  os << "mlp" << hidden_layers << "x" << hidden_dim << "-p" << dropout;
  return os.str();
}

void to_json(nlohmann::json& j, const ProbeArch& a) {
  j = {{"hidden_layers", a.hidden_layers}, {"hidden_dim", a.hidden_dim}, {"dropout", a.dropout},
       {"input_dim", a.input_dim},         {"classes", a.classes}};
}

void from_json(const nlohmann::json& j, ProbeArch& a) {
  a.hidden_layers = j.at("hidden_layers").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.dropout = j.at("dropout").get<double>();
  a.input_dim = j.value("input_dim", 384);
  a.classes = j.value("classes", kNumKeyClasses);
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const ProbeArch& a) {
  const auto in = static_cast<std::size_t>(a.input_dim);
  const auto h = static_cast<std::size_t>(a.hidden_dim);
  const auto out = static_cast<std::size_t>(a.classes);
  switch (a.hidden_layers) {
    case 0: return {{in, out}};
    case 1: return {{in, h}, {h, out}};
    default: return {{in, h}, {h, h}, {h, out}};
  }
}

}  // namespace

std::size_t probe_parameter_count(const ProbeArch& arch) {
  std::size_t n = 0;
  for (auto [in, out] : layer_shapes(arch)) n += in * out + out;
  return n;
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw UsageError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw UsageError("train: learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw UsageError("train: weight decay must be non-negative");
  if (epochs <= 0) throw UsageError("train: epochs must be positive");
  if (patience <= 0) throw UsageError("train: patience must be positive");
  if (mixup.enabled && !(mixup.alpha > 0.0 && mixup.beta > 0.0)) {
    throw UsageError("train: MixUp alpha and beta must be positive");
  }
}

std::string TrainConfig::name() const {
  std::ostringstream os;
  os << "bs" << batch_size << "-lr" << learning_rate << "-wd" << weight_decay;
  if (mixup.enabled) os << "-mix" << mixup.alpha << "," << mixup.beta;
  return os.str();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"mixup", {{"enabled", c.mixup.enabled}, {"alpha", c.mixup.alpha}, {"beta", c.mixup.beta}}},
       {"epochs", c.epochs},
       {"patience", c.patience},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  const auto& m = j.at("mixup");
  c.mixup.enabled = m.at("enabled").get<bool>();
  c.mixup.alpha = m.at("alpha").get<double>();
  c.mixup.beta = m.at("beta").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<TrainConfig> optimizer_grid(const TrainConfig& base) {
  std::vector<TrainConfig> out;
  for (int bs : {32, 64, 128, 256, 512}) {
    for (double lr : {1e-4, 3e-4, 1e-3, 3e-3}) {
      for (double wd : {1e-5, 1e-4, 1e-3, 1e-2}) {
        for (bool mix : {false, true}) {
          TrainConfig c = base;
          c.batch_size = bs;
          c.learning_rate = lr;
          c.weight_decay = wd;
          c.mixup = {.enabled = mix, .alpha = 2.0, .beta = 5.0};
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

std::vector<ProbeArch> architecture_grid() {
  std::vector<ProbeArch> out;
  for (int layers : {1, 2}) {
    for (int dim : {1024, 2048, 4096, 8192}) {
      for (double p : {0.75, 0.9, 0.95, 0.99}) {
        ProbeArch a{.hidden_layers = layers, .hidden_dim = dim, .dropout = p};
        if (!a.excluded()) out.push_back(a);
      }
    }
  }
  return out;
}

template <typename T>
Probe<T>::Probe(const ProbeArch& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  std::mt19937_64 rng(seed);
  const auto shapes = layer_shapes(arch_);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Parameter<T> w(p + "weight", Tensor<T>::matrix(shapes[l].first, shapes[l].second));
    init_truncated_normal(w.value, 0.02, rng);
    weights_.push_back(std::move(w));
    biases_.emplace_back(p + "bias", Tensor<T>({shapes[l].second}, T(0)));
  }
}

template <typename T>
std::vector<Parameter<T>*> Probe<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Probe<T>::parameters() const {
  auto mut = const_cast<Probe*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t Probe<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<T>* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
template <typename Leaf>
Var<T> Probe<T>::forward_with(Tape<T>& tape, Var<T> x, bool training, std::uint64_t dropout_seed,
                              Leaf&& leaf) const {
  (void)tape;
  if (x.value().cols() != static_cast<std::size_t>(arch_.input_dim)) {
    throw DataError("probe: input width " + std::to_string(x.value().cols()) + " does not match " +
                    std::to_string(arch_.input_dim));
  }
  Var<T> h = x;
  const std::size_t last = weights_.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    h = relu(linear(h, leaf(weights_[l]), leaf(biases_[l])));
    if (l == 0) h = dropout(h, arch_.dropout, dropout_seed, training);
  }
  return linear(h, leaf(weights_[last]), leaf(biases_[last]));
}

template <typename T>
Var<T> Probe<T>::forward(Tape<T>& tape, Var<T> x, bool training, std::uint64_t dropout_seed) {
  return forward_with(tape, x, training, dropout_seed, [&tape](const Parameter<T>& p) {
    return tape.parameter(const_cast<Parameter<T>&>(p));
  });
}

template <typename T>
std::vector<std::vector<double>> Probe<T>::logits(std::span<const Embedding> xs) const {
  std::vector<std::vector<double>> out;
  out.reserve(xs.size());
  const auto d = static_cast<std::size_t>(arch_.input_dim);
  constexpr std::size_t kChunk = 1024;
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, xs.size() - start);
    Tensor<T> x = Tensor<T>::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const Embedding& e = xs[start + i];
      if (e.size() != d) throw DataError("probe: embedding has " + std::to_string(e.size()) + " values");
      std::copy(e.begin(), e.end(), x.data() + i * d);
    }
    Tape<T> tape;
    Var<T> y = forward_with(tape, tape.constant(std::move(x)), false, 0,
                            [&tape](const Parameter<T>& p) { return tape.constant_view(p.value); });
    const auto m = y.value().mat();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      out.push_back(std::move(row));
    }
  }
  return out;
}

template <typename T>
std::vector<NamedTensor> Probe<T>::export_tensors() const {
  std::vector<NamedTensor> out;
  for (const Parameter<T>* p : parameters()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

template <typename T>
void Probe<T>::import_tensors(const Checkpoint& ckpt) {
  for (Parameter<T>* p : parameters()) {
    const Tensor<float>& t = ckpt.tensor(p->name);
    if (t.shape() != p->value.shape()) {
      throw DataError("checkpoint tensor '" + p->name + "' has shape " + t.shape_string() +
                      ", probe expects " + p->value.shape_string());
    }
    p->value = t.template cast<T>();
    p->grad = Tensor<T>(p->value.shape());
  }
}

template class Probe<float>;
template class Probe<double>;

void save_probe(const std::filesystem::path& dir, const Probe<float>& probe,
                const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "probe"}, {"arch", probe.arch()}, {"extra", extra}};
  ckpt.tensors = probe.export_tensors();
  save_checkpoint(dir, ckpt);
}

Probe<float> load_probe(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.meta.value("kind", "") != "probe") throw DataError(dir.string() + " is not a probe checkpoint");
  ProbeArch arch;
  try {
    arch = ckpt.meta.at("arch").get<ProbeArch>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("probe checkpoint metadata is incomplete: " + std::string(e.what()));
  }
  Probe<float> probe(arch, 0);
  probe.import_tensors(ckpt);
  return probe;
}

double sample_beta(double alpha, double beta, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(alpha, 1.0);
  std::gamma_distribution<double> gb(beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

MixedBatch mixup_with(const Tensor<float>& features, const Tensor<float>& targets,
                      std::span<const std::size_t> partner, std::span<const double> lambdas) {
  const std::size_t n = features.rows();
  if (targets.rows() != n || partner.size() != n || lambdas.size() != n) {
    throw UsageError("mixup: features, targets, partners and lambdas must agree in length");
  }
  MixedBatch out{features, targets};
  const auto X = features.mat();
  const auto Y = targets.mat();
  auto MX = out.features.mat();
  auto MY = out.targets.mat();
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto j = static_cast<Eigen::Index>(partner[i]);
    if (partner[i] >= n) throw UsageError("mixup: partner index out of range");
    const float lam = static_cast<float>(lambdas[i]);
    MX.row(r) = lam * X.row(r) + (1.0f - lam) * X.row(j);
    MY.row(r) = lam * Y.row(r) + (1.0f - lam) * Y.row(j);
  }
  return out;
}

MixedBatch mixup_batch(const Tensor<float>& features, const Tensor<float>& targets,
                       const MixUpConfig& cfg, std::uint64_t seed) {
  const std::size_t n = features.rows();
  if (n < 2) throw UsageError("mixup: batch needs at least two rows");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> partner(n);
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  std::vector<double> lambdas(n);
  for (double& l : lambdas) l = sample_beta(cfg.alpha, cfg.beta, rng);
  return mixup_with(features, targets, partner, lambdas);
}

void check_track_disjoint(std::span<const LabeledFeature> a, std::span<const LabeledFeature> b) {
  std::set<std::string> ids;
  for (const auto& f : a) ids.insert(f.track_id);
  for (const auto& f : b) {
    if (ids.count(f.track_id) != 0) {
      throw DataError("track '" + f.track_id + "' appears in more than one split");
    }
  }
}

Key predict_track(const Probe<float>& probe, std::span<const Embedding> windows) {
  const auto logits = probe.logits(windows);
  return keyprobe::predict_track(logits);
}

TrackPredictions predict_tracks(const Probe<float>& probe, std::span<const LabeledFeature> features) {
  std::vector<Embedding> xs;
  xs.reserve(features.size());
  for (const auto& f : features) xs.push_back(f.embedding);
  const auto logits = probe.logits(xs);

  std::map<std::pair<std::string, int>, std::size_t> group_of;
  std::vector<std::vector<std::vector<double>>> groups;
  TrackPredictions out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    auto [it, fresh] = group_of.try_emplace({f.track_id, f.shift}, groups.size());
    if (fresh) {
      groups.emplace_back();
      out.track_ids.push_back(f.track_id);
      out.shifts.push_back(f.shift);
      out.reference.push_back(key_from_class(f.label));
    } else if (class_index(out.reference[it->second]) != f.label) {
      throw DataError("track '" + f.track_id + "' has windows with different labels");
    }
    groups[it->second].push_back(logits[i]);
  }
  for (const auto& g : groups) out.predicted.push_back(keyprobe::predict_track(g));
  return out;
}

namespace {

void check_labels(std::span<const LabeledFeature> xs, int classes, int dim, const char* split) {
  for (const auto& f : xs) {
    if (f.label < 0 || f.label >= classes) {
      throw DataError(std::string(split) + ": label " + std::to_string(f.label) + " of track '" +
                      f.track_id + "' is outside 0.." + std::to_string(classes - 1));
    }
    if (f.embedding.size() != static_cast<std::size_t>(dim)) {
      throw DataError(std::string(split) + ": embedding of track '" + f.track_id + "' has " +
                      std::to_string(f.embedding.size()) + " values, expected " + std::to_string(dim));
    }
  }
}

EvalReport validate_probe(const Probe<float>& probe, std::span<const LabeledFeature> val) {
  const TrackPredictions p = predict_tracks(probe, val);
  return evaluate(p.predicted, p.reference);
}

}  // namespace

TrainedProbe train_probe(std::span<const LabeledFeature> train, std::span<const LabeledFeature> val,
                         const ProbeArch& arch, const TrainConfig& cfg) {
  arch.validate();
  cfg.validate();
  if (train.empty()) throw DataError("train_probe: empty training set");
  if (val.empty()) throw DataError("train_probe: empty validation set");
  check_labels(train, arch.classes, arch.input_dim, "train");
  check_labels(val, arch.classes, arch.input_dim, "validation");
  check_track_disjoint(train, val);

  const std::size_t n = train.size();
  const auto d = static_cast<std::size_t>(arch.input_dim);
  const auto k = static_cast<std::size_t>(arch.classes);

  TrainedProbe result{Probe<float>(arch, derive_seed(cfg.seed, "probe-init")), -1, {}, {}};
  Probe<float>& probe = result.probe;
  AdamW<float> opt(probe.parameters(), {.learning_rate = cfg.learning_rate,
                                        .weight_decay = cfg.weight_decay});
  std::vector<Tensor<float>> best_weights;
  double best_score = -1.0;
  int since_best = 0;
  std::uint64_t step = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "probe-epoch-" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Tensor<float> x = Tensor<float>::matrix(b, d);
      Tensor<float> y = Tensor<float>::matrix(b, k);
      for (std::size_t i = 0; i < b; ++i) {
        const LabeledFeature& f = train[order[start + i]];
        std::copy(f.embedding.begin(), f.embedding.end(), x.data() + i * d);
        y.data()[i * k + static_cast<std::size_t>(f.label)] = 1.0f;
      }
      if (cfg.mixup.enabled && b >= 2) {
        MixedBatch m = mixup_batch(x, y, cfg.mixup, derive_seed(cfg.seed, "probe-mixup-" + std::to_string(step)));
        x = std::move(m.features);
        y = std::move(m.targets);
      }
      Tape<float> tape;
      Var<float> logits = probe.forward(tape, tape.constant(std::move(x)), true,
                                        derive_seed(cfg.seed, "probe-dropout-" + std::to_string(step)));
      Var<float> loss = softmax_cross_entropy(logits, y);
      loss_sum += loss.value()[0];
      tape.backward(loss);
      opt.step();
      ++batches;
      ++step;
    }

    const EvalReport report = validate_probe(probe, val);
    result.history.push_back({epoch, loss_sum / static_cast<double>(batches), report.weighted,
                              report.correct()});
    if (report.weighted > best_score) {
      best_score = report.weighted;
      result.best_epoch = epoch;
      result.best_val = report;
      best_weights.clear();
      for (const Parameter<float>* p : probe.parameters()) best_weights.push_back(p->value);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  auto params = probe.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = std::move(best_weights[i]);
  return result;
}

std::vector<GridRow> grid_search(std::span<const LabeledFeature> train,
                                 std::span<const LabeledFeature> val, const GridOptions& options,
                                 const std::function<void(const GridRow&)>& on_row) {
  const auto archs = strided_subset(architecture_grid(), options.max_archs);
  const auto configs = strided_subset(optimizer_grid(options.base), options.max_configs);
  std::vector<GridRow> rows;
  for (const auto& a : archs) {
    for (const auto& c : configs) {
      GridRow row;
      row.arch = a;
      row.config = c;
      row.config.seed = derive_seed(options.base.seed, "grid-" + a.name() + "-" + c.name());
      rows.push_back(row);
    }
  }

  std::mutex writer;
  parallel_for(rows.size(), options.threads, [&](std::size_t i) {
    GridRow& row = rows[i];
    try {
      const TrainedProbe t = train_probe(train, val, row.arch, row.config);
      row.ok = true;
      row.best_epoch = t.best_epoch;
      row.val_weighted = t.best_val.weighted;
      row.val_correct = t.best_val.correct();
    } catch (const Error& e) {
      row.error = e.what();
    }
    if (on_row) {
      std::lock_guard lock(writer);
      on_row(row);
    }
  });

  std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    if (a.ok != b.ok) return a.ok;
    return a.val_weighted > b.val_weighted;
  });
  return rows;
}

namespace {

std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

void write_grid_csv(std::ostream& os, std::span<const GridRow> rows, const std::string& dataset) {
  os << "dataset,rank,hidden_layers,hidden_dim,dropout,batch_size,learning_rate,weight_decay,"
        "mixup,mixup_alpha,mixup_beta,epochs,patience,seed,status,best_epoch,val_weighted,"
        "val_correct,error\n";
  std::size_t rank = 0;
  for (const GridRow& r : rows) {
    os << csv_field(dataset) << ',' << ++rank << ',' << r.arch.hidden_layers << ','
       << r.arch.hidden_dim << ',' << r.arch.dropout << ',' << r.config.batch_size << ','
       << r.config.learning_rate << ',' << r.config.weight_decay << ','
       << (r.config.mixup.enabled ? "beta" : "none") << ',' << r.config.mixup.alpha << ','
       << r.config.mixup.beta << ',' << r.config.epochs << ',' << r.config.patience << ','
       << r.config.seed << ',' << (r.ok ? "ok" : "failed") << ',' << r.best_epoch << ','
       << std::fixed << std::setprecision(4) << r.val_weighted << ',' << r.val_correct
       << std::defaultfloat << std::setprecision(6) << ',' << csv_field(r.error) << '\n';
  }
}

void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows,
                    const std::string& dataset) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_grid_csv(os, rows, dataset);
}

std::vector<LabeledFeature> expand_with_shifts(std::span<const TrackRef> tracks,
                                               std::span<const int> shifts,
                                               const VariantSource& audio,
                                               const EncoderModel& encoder,
                                               std::size_t context_len, int threads) {
  const std::size_t jobs = tracks.size() * shifts.size();
  std::vector<std::vector<Embedding>> feats(jobs);
  parallel_for(jobs, threads, [&](std::size_t j) {
    const MelExtractor mel(encoder.mel);
    const Waveform w = audio(j / shifts.size(), shifts[j % shifts.size()]);
    feats[j] = extract_features(w, context_len, encoder, mel);
  });

  std::vector<LabeledFeature> out;
  for (std::size_t j = 0; j < jobs; ++j) {
    const TrackRef& t = tracks[j / shifts.size()];
    const int shift = shifts[j % shifts.size()];
    const int label = class_index(transpose_key(t.key, shift));
    for (std::size_t w = 0; w < feats[j].size(); ++w) {
      out.push_back({std::move(feats[j][w]), label, t.track_id, static_cast<int>(w), shift});
    }
  }
  return out;
}

std::vector<int> shift_range(int lo, int hi) {
  if (lo > hi) throw UsageError("shift range is empty");
  std::vector<int> out(static_cast<std::size_t>(hi - lo + 1));
  std::iota(out.begin(), out.end(), lo);
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_track_ids(
    std::vector<std::string> track_ids, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw UsageError("validation fraction must lie in [0, 1)");
  }
  std::sort(track_ids.begin(), track_ids.end());
  track_ids.erase(std::unique(track_ids.begin(), track_ids.end()), track_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(track_ids.begin(), track_ids.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(track_ids.size())));
  if (val_fraction > 0.0 && n_val == 0 && track_ids.size() > 1) n_val = 1;
  std::vector<std::string> val(track_ids.end() - static_cast<std::ptrdiff_t>(n_val), track_ids.end());
  track_ids.resize(track_ids.size() - n_val);
  std::sort(track_ids.begin(), track_ids.end());
  std::sort(val.begin(), val.end());
  return {std::move(track_ids), std::move(val)};
}

}  // namespace keyprobe
