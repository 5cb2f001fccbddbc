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

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "keyprobe/augmap.hpp"
#include "keyprobe/error.hpp"
#include "keyprobe/synth.hpp"

namespace keyprobe {
namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

TEST(SolveRidge, IdentityAndScaling) {
  const Eigen::MatrixXd X = gaussian(200, 8, 1);
  const LinearMap id = solve_ridge(X, X, 0.0);
  EXPECT_LT((id.W - Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-9);
  EXPECT_LT(id.b.norm(), 1e-9);
  const LinearMap twice = solve_ridge(X, 2.0 * X, 1e-6);
  EXPECT_LT((twice.W - 2.0 * Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-5);
}

TEST(SolveRidge, RecoversAffineMap) {
  const Eigen::MatrixXd X = gaussian(300, 6, 2);
  const Eigen::MatrixXd A = gaussian(6, 6, 3);
  Eigen::RowVectorXd c(6);
  c << 1, -2, 0.5, 0, 3, -1;
  const Eigen::MatrixXd Y = (X * A).rowwise() + c;
  const LinearMap m = solve_ridge(X, Y, 0.0);
  EXPECT_LT((m.W - A).norm(), 1e-9);
  EXPECT_LT((m.b - c).norm(), 1e-9);
  EXPECT_LT(mean_squared_error(m.apply(X), Y), 1e-18);
}

// Full-batch gradient descent on the same objective, written independently
// of the closed form.
LinearMap gradient_descent_fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda) {
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(X.cols(), Y.cols());
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(Y.cols());
  const Eigen::MatrixXd Xa = [&] {
    Eigen::MatrixXd m(X.rows(), X.cols() + 1);
    m << X, Eigen::VectorXd::Ones(X.rows());
    return m;
  }();
  const double L = 2.0 * (Xa.transpose() * Xa).eigenvalues().real().maxCoeff() + 2.0 * lambda;
  const double step = 1.0 / L;
  for (int it = 0; it < 20000; ++it) {
    const Eigen::MatrixXd R = (X * W).rowwise() + b - Y;
    const Eigen::MatrixXd gW = 2.0 * X.transpose() * R + 2.0 * lambda * W;
    const Eigen::RowVectorXd gb = 2.0 * R.colwise().sum();
    W -= step * gW;
    b -= step * gb;
  }
  LinearMap m;
  m.W = W;
  m.b = b;
  return m;
}

TEST(SolveRidge, AgreesWithIterativeSolver) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd X = gaussian(120, 5, 10 + seed);
    const Eigen::MatrixXd A = gaussian(5, 4, 20 + seed);
    const Eigen::MatrixXd Y = X * A + gaussian(120, 4, 30 + seed, 0.01);
    for (double lambda : {0.0, 0.5, 10.0}) {
      const LinearMap closed = solve_ridge(X, Y, lambda);
      const LinearMap iter = gradient_descent_fit(X, Y, lambda);
      EXPECT_LT((closed.W - iter.W).norm() / closed.W.norm(), 1e-4) << seed << " " << lambda;
      EXPECT_LT((closed.b - iter.b).norm(), 1e-4 * (1.0 + closed.b.norm()));
    }
  }
}

TEST(SolveRidge, SingularWithoutRidgeAsksForLambda) {
  const Eigen::MatrixXd X = gaussian(5, 10, 4);
  try {
    solve_ridge(X, X, 0.0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nonzero ridge lambda"), std::string::npos);
  }
  EXPECT_NO_THROW(solve_ridge(X, X, default_ridge(X)));
  EXPECT_THROW(solve_ridge(X, gaussian(4, 10, 5), 1.0), DataError);
  EXPECT_THROW(solve_ridge(X, X, -1.0), UsageError);
}

TEST(Metrics, Examples) {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 1, 0, 1, 0;
  EXPECT_DOUBLE_EQ(mean_squared_error(a, b), 0.5);
  EXPECT_DOUBLE_EQ(mean_cosine_distance(a, b), 0.5);
  EXPECT_DOUBLE_EQ(mean_cosine_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(default_ridge(a), 1e-3 * 2.0 / 2.0);
}

TEST(FitLinearMap, SplitAndBaselines) {
  PairedEmbeddings p;
  p.X = gaussian(100, 6, 6);
  p.Y = p.X * 0.5 + gaussian(100, 6, 7, 0.01);
  p.augmentation = "gain";
  p.params = "-6 dB";
  const LinearMapFit fit = fit_linear_map(p, std::nullopt, 3);
  EXPECT_EQ(fit.report.n_train, 80u);
  EXPECT_EQ(fit.report.n_heldout, 20u);
  EXPECT_LT(fit.report.train_mse, fit.report.identity_train_mse);
  EXPECT_LT(fit.report.heldout_mse, fit.report.identity_heldout_mse);
  EXPECT_GE(fit.report.heldout_cosine, 0.0);
  EXPECT_DOUBLE_EQ(fit.report.lambda, fit.map.lambda);
  EXPECT_GT(fit.report.lambda, 0.0);
  EXPECT_EQ(fit_linear_map(p, 0.0, 3).report.lambda, 0.0);
}

TEST(FitLinearMap, TrainResidualNeverExceedsIdentity) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 30; ++t) {
    PairedEmbeddings p;
    p.X = gaussian(60, 5, rng());
    p.Y = p.X * gaussian(5, 5, rng(), 0.5) + gaussian(60, 5, rng(), 0.5);
    const auto fit = fit_linear_map(p, 0.0, rng());
    EXPECT_LE(fit.report.train_mse, fit.report.identity_train_mse + 1e-12);
  }
}

Waveform tone(double hz, double seconds = 1.0) {
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(seconds * w.sample_rate));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * hz * i / w.sample_rate));
  }
  return w;
}

double rms(const Waveform& w, std::size_t from = 2000) {
  double e = 0.0;
  for (std::size_t i = from; i < w.size(); ++i) e += static_cast<double>(w.samples[i]) * w.samples[i];
  return std::sqrt(e / static_cast<double>(w.size() - from));
}

TEST(Augmentations, GainAndNoiseLevels) {
  const Waveform w = tone(440.0);
  EXPECT_EQ(apply_gain_db(w, 0.0).samples, w.samples);
  EXPECT_NEAR(rms(apply_gain_db(w, -6.0)) / rms(w), std::pow(10.0, -6.0 / 20.0), 1e-6);
  const Waveform noisy = add_noise(w, -20.0, 4);
  Waveform diff = noisy;
  for (std::size_t i = 0; i < w.size(); ++i) diff.samples[i] -= w.samples[i];
  EXPECT_NEAR(rms(diff, 0) / rms(w, 0), 0.1, 0.005);
  EXPECT_EQ(add_noise(w, -20.0, 4).samples, noisy.samples);
}

TEST(Augmentations, FirstOrderFilterResponses) {
  // |H| of a one-pole filter at the cutoff is about 1/sqrt(2)
  const double lo_pass = rms(first_order_lowpass(tone(100.0), 1000.0)) / rms(tone(100.0));
  const double lo_stop = rms(first_order_lowpass(tone(6000.0), 1000.0)) / rms(tone(6000.0));
  EXPECT_GT(lo_pass, 0.97);
  EXPECT_LT(lo_stop, 0.3);
  const double hi_pass = rms(first_order_highpass(tone(6000.0), 500.0)) / rms(tone(6000.0));
  const double hi_stop = rms(first_order_highpass(tone(50.0), 500.0)) / rms(tone(50.0));
  EXPECT_GT(hi_pass, 0.97);
  EXPECT_LT(hi_stop, 0.15);
  const double hi_cut = rms(first_order_highpass(tone(500.0), 500.0)) / rms(tone(500.0));
  EXPECT_NEAR(hi_cut, 1.0 / std::sqrt(2.0), 0.01);
  const double lo_cut = rms(first_order_lowpass(tone(1000.0), 1000.0)) / rms(tone(1000.0));
  EXPECT_NEAR(lo_cut, 1.0 / std::sqrt(2.0), 0.01);
  EXPECT_THROW(first_order_lowpass(tone(100.0), 9000.0), UsageError);
}

TEST(Augmentations, Parsing) {
  const Augmentation p = parse_augmentation("pitch:+2");
  EXPECT_EQ(p.kind, AugKind::kPitch);
  EXPECT_DOUBLE_EQ(p.amount, 2.0);
  EXPECT_EQ(p.name(), "pitch");
  EXPECT_EQ(parse_augmentation("gain:-6").kind, AugKind::kGain);
  EXPECT_EQ(parse_augmentation("lowpass:1000").params(), "1000 Hz");
  EXPECT_THROW(parse_augmentation("pitch"), UsageError);
  EXPECT_THROW(parse_augmentation("reverb:2"), UsageError);
  EXPECT_THROW(parse_augmentation("gain:loud"), UsageError);
  EXPECT_THROW(parse_augmentation("pitch:1.5"), UsageError);
  EXPECT_EQ(default_augmentations().size(), 7u);
}

EncoderModel tiny_model() {
  EncoderModel m;
  m.encoder.embed_dim = 16;
  m.encoder.depth = 1;
  m.encoder.heads = 2;
  m.encoder.mlp_dim = 32;
  m.net = Encoder<float>(m.encoder, 5);
  return m;
}

TEST(AugLinearityReport, RowsPerAugmentationAndNoOpGain) {
  std::vector<Waveform> clips;
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) {
    SynthSpec s;
    s.key = key_from_class(i % 24);
    s.seed = static_cast<std::uint64_t>(i);
    s.duration_s = 1.2;
    clips.push_back(synth_clip(s));
    ids.push_back("clip" + std::to_string(i));
  }
  const std::vector<Augmentation> augs{parse_augmentation("gain:0"), parse_augmentation("pitch:+2"),
                                       parse_augmentation("lowpass:1000")};
  AugAnalysisOptions opt;
  opt.context_len = 16384;
  const AugAnalysis a = aug_linearity_report(clips, ids, tiny_model(), augs, opt);
  ASSERT_EQ(a.reports.size(), 3u);
  EXPECT_EQ(a.reports[0].augmentation, "gain");
  EXPECT_EQ(a.reports[1].augmentation, "pitch");
  EXPECT_LT(a.reports[0].identity_train_mse, 1e-12);
  EXPECT_LT(a.reports[0].identity_heldout_mse, 1e-12);
  for (const auto& r : a.reports) {
    EXPECT_GE(r.train_mse, 0.0);
    EXPECT_GE(r.heldout_mse, 0.0);
  }
  for (std::size_t i = 1; i < 3; ++i) EXPECT_LT(a.reports[i].train_mse, a.reports[i].identity_train_mse);
  ASSERT_EQ(a.pairs.size(), 3u);
  EXPECT_EQ(a.pairs[1].X.rows(), 30);
  EXPECT_EQ(a.pairs[1].clip_ids, ids);

  std::ostringstream csv;
  write_aug_report_csv(csv, a.reports);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
            "augmentation,params,lambda,n_train,n_heldout,train_mse,heldout_mse,heldout_cosine,"
            "identity_train_mse,identity_heldout_mse,identity_heldout_cosine");
  std::ostringstream pca;
  write_pca_coordinates(pca, a.pairs[1]);
  const std::string text = pca.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 61);
  EXPECT_EQ(text.substr(0, text.find('\n')), "clip_id,pc1,pc2,is_augmented");
}

}  // namespace
}  // namespace keyprobe
