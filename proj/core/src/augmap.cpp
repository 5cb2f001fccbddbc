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

#include "keyprobe/augmap.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "keyprobe/error.hpp"
#include "keyprobe/hash.hpp"
#include "keyprobe/parallel.hpp"

namespace keyprobe {

Eigen::MatrixXd LinearMap::apply(const Eigen::MatrixXd& X) const {
  return (X * W).rowwise() + b;
}

double default_ridge(const Eigen::MatrixXd& X) {
  if (X.cols() == 0) return 0.0;
  return 1e-3 * X.squaredNorm() / static_cast<double>(X.cols());
}

LinearMap solve_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda) {
  if (X.rows() != Y.rows()) throw DataError("ridge: X and Y row counts differ");
  if (X.rows() == 0) throw DataError("ridge: no rows");
  if (!(lambda >= 0.0)) throw UsageError("ridge: lambda must be non-negative");
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const Eigen::RowVectorXd my = Y.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mx;
  const Eigen::MatrixXd Yc = Y.rowwise() - my;
  Eigen::MatrixXd A = Xc.transpose() * Xc;
  A.diagonal().array() += lambda;
  const Eigen::MatrixXd B = Xc.transpose() * Yc;

  LinearMap map;
  map.lambda = lambda;
  if (lambda > 0.0) {
    map.W = A.llt().solve(B);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < A.cols()) {
      throw DataError("ridge: normal equations are singular (rank " + std::to_string(qr.rank()) +
                      " of " + std::to_string(A.cols()) + "); use a nonzero ridge lambda");
    }
    map.W = qr.solve(B);
  }
  map.b = my - mx * map.W;
  if (!map.W.allFinite() || !map.b.allFinite()) throw NumericalError("ridge: non-finite solution");
  return map;
}

double mean_squared_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double mean_cosine_distance(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    const double denom = pred.row(r).norm() * target.row(r).norm();
    total += denom > 0.0 ? 1.0 - pred.row(r).dot(target.row(r)) / denom : 1.0;
  }
  return total / static_cast<double>(pred.rows());
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& M, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = M.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace

LinearMapFit fit_linear_map(const PairedEmbeddings& pairs, std::optional<double> lambda,
                            std::uint64_t seed, double train_fraction) {
  const Eigen::Index n = pairs.X.rows();
  if (pairs.Y.rows() != n || pairs.Y.cols() != pairs.X.cols()) {
    throw DataError("paired embeddings: X and Y shapes differ");
  }
  if (n < 2) throw DataError("paired embeddings: need at least 2 rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
  const std::span<const std::size_t> tr(order.data(), n_train);
  const std::span<const std::size_t> ho(order.data() + n_train, order.size() - n_train);
  const Eigen::MatrixXd Xt = take_rows(pairs.X, tr), Yt = take_rows(pairs.Y, tr);
  const Eigen::MatrixXd Xh = take_rows(pairs.X, ho), Yh = take_rows(pairs.Y, ho);

  LinearMapFit fit;
  fit.map = solve_ridge(Xt, Yt, lambda.value_or(default_ridge(Xt)));
  AugMapReport& r = fit.report;
  r.augmentation = pairs.augmentation;
  r.params = pairs.params;
  r.lambda = fit.map.lambda;
  r.n_train = tr.size();
  r.n_heldout = ho.size();
  r.train_mse = mean_squared_error(fit.map.apply(Xt), Yt);
  const Eigen::MatrixXd pred = fit.map.apply(Xh);
  r.heldout_mse = mean_squared_error(pred, Yh);
  r.heldout_cosine = mean_cosine_distance(pred, Yh);
  r.identity_train_mse = mean_squared_error(Xt, Yt);
  r.identity_heldout_mse = mean_squared_error(Xh, Yh);
  r.identity_heldout_cosine = mean_cosine_distance(Xh, Yh);
  return fit;
}

std::string Augmentation::name() const {
  switch (kind) {
    case AugKind::kPitch: return "pitch";
    case AugKind::kGain: return "gain";
    case AugKind::kNoise: return "noise";
    case AugKind::kLowpass: return "lowpass";
    case AugKind::kHighpass: return "highpass";
  }
  return "unknown";
}

std::string Augmentation::params() const {
  std::ostringstream os;
  switch (kind) {
    case AugKind::kPitch: os << std::showpos << amount << std::noshowpos << " st"; break;
    case AugKind::kGain: os << std::showpos << amount << std::noshowpos << " dB"; break;
    case AugKind::kNoise: os << amount << " dB re signal"; break;
    case AugKind::kLowpass:
    case AugKind::kHighpass: os << amount << " Hz"; break;
  }
  return os.str();
}

Waveform Augmentation::apply(const Waveform& w, std::uint64_t seed) const {
  switch (kind) {
    case AugKind::kPitch: return pitch_shift(w, static_cast<int>(std::lround(amount)));
    case AugKind::kGain: return apply_gain_db(w, amount);
    case AugKind::kNoise: return add_noise(w, amount, seed);
    case AugKind::kLowpass: return first_order_lowpass(w, amount);
    case AugKind::kHighpass: return first_order_highpass(w, amount);
  }
  return w;
}

Augmentation parse_augmentation(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw UsageError("augmentation '" + text + "' must look like name:amount");
  }
  const std::string name = text.substr(0, colon);
  std::string value = text.substr(colon + 1);
  if (!value.empty() && value.front() == '+') value.erase(0, 1);
  Augmentation a;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, a.amount);
  if (ec != std::errc() || ptr != end || !std::isfinite(a.amount)) {
    throw UsageError("augmentation '" + text + "': bad amount");
  }
  if (name == "pitch") {
    a.kind = AugKind::kPitch;
    if (a.amount != std::round(a.amount)) throw UsageError("augmentation '" + text + "': semitones must be whole");
  } else if (name == "gain") {
    a.kind = AugKind::kGain;
  } else if (name == "noise") {
    a.kind = AugKind::kNoise;
  } else if (name == "lowpass" || name == "highpass") {
    a.kind = name == "lowpass" ? AugKind::kLowpass : AugKind::kHighpass;
    if (!(a.amount > 0.0)) throw UsageError("augmentation '" + text + "': cutoff must be positive");
  } else {
    throw UsageError("unknown augmentation '" + name + "'");
  }
  return a;
}

std::vector<Augmentation> default_augmentations() {
  return {{AugKind::kPitch, 2.0},     {AugKind::kPitch, -2.0}, {AugKind::kGain, 6.0},
          {AugKind::kGain, -6.0},     {AugKind::kNoise, -20.0}, {AugKind::kLowpass, 1000.0},
          {AugKind::kHighpass, 500.0}};
}

namespace {

// One-pole, one-zero section from the bilinear transform of an analog RC
// filter: y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1].
Waveform one_pole(const Waveform& w, double cutoff_hz, bool highpass) {
  if (!(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * w.sample_rate) {
    throw UsageError("filter cutoff must lie in (0, sample_rate / 2)");
  }
  const double k = std::tan(std::numbers::pi * cutoff_hz / w.sample_rate);
  const double a1 = (k - 1.0) / (k + 1.0);
  const double b0 = highpass ? 1.0 / (1.0 + k) : k / (1.0 + k);
  const double b1 = highpass ? -b0 : b0;
  Waveform out = w;
  double x_prev = 0.0, y = 0.0;
  for (float& s : out.samples) {
    const double x = s;
    y = b0 * x + b1 * x_prev - a1 * y;
    x_prev = x;
    s = static_cast<float>(y);
  }
  return out;
}

}  // namespace

Waveform first_order_lowpass(const Waveform& w, double cutoff_hz) { return one_pole(w, cutoff_hz, false); }

Waveform first_order_highpass(const Waveform& w, double cutoff_hz) { return one_pole(w, cutoff_hz, true); }

Waveform apply_gain_db(const Waveform& w, double db) {
  const auto g = static_cast<float>(std::pow(10.0, db / 20.0));
  Waveform out = w;
  for (float& s : out.samples) s *= g;
  return out;
}

Waveform add_noise(const Waveform& w, double noise_db, std::uint64_t seed) {
  double energy = 0.0;
  for (float s : w.samples) energy += static_cast<double>(s) * s;
  const double rms = w.samples.empty() ? 0.0 : std::sqrt(energy / static_cast<double>(w.samples.size()));
  std::normal_distribution<double> dist(0.0, rms * std::pow(10.0, noise_db / 20.0));
  std::mt19937_64 rng(seed);
  Waveform out = w;
  for (float& s : out.samples) s += static_cast<float>(dist(rng));
  return out;
}

namespace {

Eigen::RowVectorXd clip_embedding(const Waveform& w, const EncoderModel& model,
                                  const MelExtractor& mel, std::size_t context_len) {
  const auto windows = extract_features(w, context_len, model, mel);
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(windows.front().size()));
  for (const Embedding& e : windows) {
    for (std::size_t i = 0; i < e.size(); ++i) mean(static_cast<Eigen::Index>(i)) += e[i];
  }
  return mean / static_cast<double>(windows.size());
}

}  // namespace

AugAnalysis aug_linearity_report(std::span<const Waveform> clips,
                                 std::span<const std::string> clip_ids,
                                 const EncoderModel& encoder,
                                 std::span<const Augmentation> augmentations,
                                 const AugAnalysisOptions& options) {
  if (clips.size() != clip_ids.size()) throw UsageError("aug analysis: one id per clip required");
  if (clips.size() < 2) throw DataError("aug analysis: need at least 2 clips");
  const auto n = static_cast<Eigen::Index>(clips.size());
  const auto d = static_cast<Eigen::Index>(encoder.encoder.embed_dim);

  Eigen::MatrixXd clean(n, d);
  parallel_for(clips.size(), options.threads, [&](std::size_t i) {
    const MelExtractor mel(encoder.mel);
    clean.row(static_cast<Eigen::Index>(i)) = clip_embedding(clips[i], encoder, mel, options.context_len);
  });

  AugAnalysis out;
  out.pairs.resize(augmentations.size());
  out.reports.resize(augmentations.size());
  for (std::size_t a = 0; a < augmentations.size(); ++a) {
    const Augmentation& aug = augmentations[a];
    PairedEmbeddings& p = out.pairs[a];
    p.X = clean;
    p.Y.resize(n, d);
    p.augmentation = aug.name();
    p.params = aug.params();
    p.clip_ids.assign(clip_ids.begin(), clip_ids.end());
    parallel_for(clips.size(), options.threads, [&](std::size_t i) {
      const MelExtractor mel(encoder.mel);
      const std::uint64_t seed = derive_seed(options.seed, "aug-" + aug.name() + "-" + std::to_string(i));
      p.Y.row(static_cast<Eigen::Index>(i)) =
          clip_embedding(aug.apply(clips[i], seed), encoder, mel, options.context_len);
    });
    out.reports[a] = fit_linear_map(p, options.lambda, derive_seed(options.seed, "aug-split")).report;
  }
  return out;
}

void write_aug_report_csv(std::ostream& os, std::span<const AugMapReport> reports) {
  os << "augmentation,params,lambda,n_train,n_heldout,train_mse,heldout_mse,heldout_cosine,"
        "identity_train_mse,identity_heldout_mse,identity_heldout_cosine\n";
  os << std::setprecision(8);
  for (const AugMapReport& r : reports) {
    os << r.augmentation << ',' << r.params << ',' << r.lambda << ',' << r.n_train << ','
       << r.n_heldout << ',' << r.train_mse << ',' << r.heldout_mse << ',' << r.heldout_cosine << ','
       << r.identity_train_mse << ',' << r.identity_heldout_mse << ',' << r.identity_heldout_cosine
       << '\n';
  }
}

void write_aug_report_csv(const std::filesystem::path& path, std::span<const AugMapReport> reports) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_aug_report_csv(os, reports);
}

void write_pca_coordinates(std::ostream& os, const PairedEmbeddings& pairs) {
  const Eigen::Index n = pairs.X.rows();
  Eigen::MatrixXd all(2 * n, pairs.X.cols());
  all << pairs.X, pairs.Y;
  const Eigen::MatrixXd centred = all.rowwise() - all.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / std::max<double>(1.0, static_cast<double>(2 * n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index c = cov.cols();
  const Eigen::MatrixXd basis = eig.eigenvectors().rightCols(std::min<Eigen::Index>(2, c)).rowwise().reverse();
  const Eigen::MatrixXd coords = centred * basis;
  os << "clip_id,pc1,pc2,is_augmented\n" << std::setprecision(8);
  for (Eigen::Index r = 0; r < 2 * n; ++r) {
    const auto i = static_cast<std::size_t>(r % n);
    const std::string id = i < pairs.clip_ids.size() ? pairs.clip_ids[i] : std::to_string(i);
    os << id << ',' << coords(r, 0) << ',' << (coords.cols() > 1 ? coords(r, 1) : 0.0) << ','
       << (r >= n ? 1 : 0) << '\n';
  }
}

}  // namespace keyprobe
