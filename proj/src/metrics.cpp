// Copyright 2026 The ldmrb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ldmrb/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldmrb/error.hpp"

namespace ldmrb {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel(const RgbImage& img, int c) {
  Plane p{img.height(), img.width(), std::vector<double>(img.size() / 3)};
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) p.v[static_cast<std::size_t>(y) * p.w + x] = img.at(y, x, c);
  return p;
}

/// Valid separable Gaussian filtering.
Plane filter(const Plane& in) {
  static const auto g = gaussian_window();
  const int ow = in.w - kWin + 1, oh = in.h - kWin + 1;
  Plane tmp{in.h, ow, std::vector<double>(static_cast<std::size_t>(in.h) * ow)};
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * in.at(y, x + k);
      tmp.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  Plane out{oh, ow, std::vector<double>(static_cast<std::size_t>(oh) * ow)};
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * tmp.at(y + k, x);
      out.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane p{a.h, a.w, a.v};
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] *= b.v[i];
  return p;
}

struct SsimParts {
  double ssim = 0.0;
  double cs = 0.0;
};

SsimParts ssim_parts(const Plane& a, const Plane& b) {
  const Plane mu_a = filter(a), mu_b = filter(b);
  const Plane e_aa = filter(product(a, a)), e_bb = filter(product(b, b)), e_ab = filter(product(a, b));
  double ssim_sum = 0.0, cs_sum = 0.0;
  const std::size_t n = mu_a.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma;
    const double vb = e_bb.v[i] - mb * mb;
    const double cov = e_ab.v[i] - ma * mb;
    const double cs = (2.0 * cov + kC2) / (va + vb + kC2);
    const double lum = (2.0 * (ma * mb) + kC1) / (ma * ma + mb * mb + kC1);
    ssim_sum += lum * cs;
    cs_sum += cs;
  }
  return {ssim_sum / static_cast<double>(n), cs_sum / static_cast<double>(n)};
}

Plane downsample(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
  return out;
}

void require_same(const RgbImage& a, const RgbImage& b, const char* what) {
  require(a.same_shape(b), ErrorCode::DimensionMismatch,
          std::string(what) + ": image sizes differ (" + std::to_string(a.height()) + "x" +
              std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()) + ")");
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

/// Tr(sqrt(A B A)) with A = sqrt(sigma_r). Returns false when an eigenvalue is
/// more negative than the tolerance.
bool trace_sqrt_product(const Eigen::MatrixXd& sr, const Eigen::MatrixXd& sg, double tol, double& out) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(sr);
  if (er.eigenvalues().minCoeff() < -tol) return false;
  const Eigen::VectorXd root = er.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd a = er.eigenvectors() * root.asDiagonal() * er.eigenvectors().transpose();
  Eigen::MatrixXd m = a * sg * a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  if (em.eigenvalues().minCoeff() < -tol) return false;
  out = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return true;
}

}  // namespace

double psnr(const RgbImage& a, const RgbImage& b) {
  require_same(a, b, "psnr");
  require(!a.empty(), ErrorCode::EmptyInput, "psnr: empty image");
  double sq = 0.0;
  const auto pa = a.pixels(), pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) sq += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  const double mse = sq / static_cast<double>(pa.size());
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const RgbImage& a, const RgbImage& b) {
  require_same(a, b, "ssim");
  require(std::min(a.height(), a.width()) >= kWin, ErrorCode::TooSmall,
          "ssim needs images of at least 11x11 pixels");
  double total = 0.0;
  for (int c = 0; c < 3; ++c) total += ssim_parts(channel(a, c), channel(b, c)).ssim;
  return total / 3.0;
}

int msssim_scales(int height, int width) {
  int side = std::min(height, width);
  int scales = 0;
  while (scales < 5 && side >= kWin) {
    ++scales;
    side /= 2;
  }
  return scales;
}

double msssim(const RgbImage& a, const RgbImage& b) {
  require_same(a, b, "msssim");
  const int scales = msssim_scales(a.height(), a.width());
  require(scales > 0, ErrorCode::TooSmall, "msssim needs images of at least 11x11 pixels");
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsssimWeights[s];
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    Plane pa = channel(a, c), pb = channel(b, c);
    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
      const auto parts = ssim_parts(pa, pb);
      const double w = kMsssimWeights[s] / weight_sum;
      const double term = s + 1 == scales ? parts.ssim : parts.cs;
      value *= std::pow(std::max(term, 0.0), w);
      if (s + 1 < scales) {
        pa = downsample(pa);
        pb = downsample(pb);
      }
    }
    total += value;
  }
  return total / 3.0;
}

double clip_score(std::span<const RgbImage> images, std::span<const std::string> prompts,
                  const ScorerClient& scorer) {
  require(images.size() == prompts.size(), ErrorCode::InvalidArgument, "clip_score: list lengths differ");
  require(!images.empty(), ErrorCode::EmptyInput, "clip_score: no images");
  const auto scores = scorer.score_batch(images, prompts);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return 100.0 * sum / static_cast<double>(scores.size());
}

double fid(const FeatureBatch& ref, const FeatureBatch& gen, const FidOptions& options) {
  require(ref.extractor_id == gen.extractor_id, ErrorCode::ExtractorMismatch,
          "fid: features come from '" + ref.extractor_id + "' and '" + gen.extractor_id + "'");
  require(ref.features.cols() == gen.features.cols(), ErrorCode::ExtractorMismatch, "fid: feature dims differ");
  require(ref.features.rows() >= 2 && gen.features.rows() >= 2, ErrorCode::EmptyInput,
          "fid needs at least two samples per batch");
  const Eigen::RowVectorXd mr = ref.features.colwise().mean();
  const Eigen::RowVectorXd mg = gen.features.colwise().mean();
  Eigen::MatrixXd sr = covariance(ref.features, mr);
  Eigen::MatrixXd sg = covariance(gen.features, mg);
  const auto d = sr.rows();

  double tr_sqrt = 0.0;
  bool ok = trace_sqrt_product(sr, sg, options.eigen_tolerance, tr_sqrt);
  // Rank-deficient covariances (N <= D is the usual case at small scale)
  // make the square root ill-conditioned, so regularize both sides.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(sr, Eigen::EigenvaluesOnly), eg(sg, Eigen::EigenvaluesOnly);
  const bool degenerate = er.eigenvalues().minCoeff() <= options.eigen_tolerance ||
                          eg.eigenvalues().minCoeff() <= options.eigen_tolerance;
  if (!ok || degenerate) {
    spdlog::debug("fid: degenerate covariance (N={}/{}, D={}), adding {} I", ref.features.rows(),
                  gen.features.rows(), d, options.regularization);
    const Eigen::MatrixXd reg = options.regularization * Eigen::MatrixXd::Identity(d, d);
    sr += reg;
    sg += reg;
    ok = trace_sqrt_product(sr, sg, options.eigen_tolerance, tr_sqrt);
    require(ok, ErrorCode::InvalidArgument, "fid: covariance product has negative eigenvalues");
  }
  const double value = (mr - mg).squaredNorm() + sr.trace() + sg.trace() - 2.0 * tr_sqrt;
  if (value < -1e-6) spdlog::warn("fid: negative value {} clamped to 0", value);
  return std::max(value, 0.0);
}

double inception_score(const ProbBatch& batch, int splits) {
  const auto& p = batch.probs;
  require(splits >= 1, ErrorCode::InvalidArgument, "inception_score: splits must be >= 1");
  require(p.rows() >= splits && p.rows() > 0, ErrorCode::EmptyInput,
          "inception_score: fewer rows than splits");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (p.row(i).minCoeff() < 0.0 || std::abs(p.row(i).sum() - 1.0) > 1e-6)
      fail(ErrorCode::DegenerateProbs, "row " + std::to_string(i) + " is not a probability vector");
  }
  const Eigen::Index per = p.rows() / splits;
  double total = 0.0;
  for (int s = 0; s < splits; ++s) {
    const Eigen::Index begin = s * per;
    const Eigen::Index end = s + 1 == splits ? p.rows() : begin + per;  // remainder joins the last split
    const Eigen::RowVectorXd marginal = p.middleRows(begin, end - begin).colwise().mean();
    double kl_sum = 0.0;
    for (Eigen::Index i = begin; i < end; ++i)
      for (Eigen::Index k = 0; k < p.cols(); ++k) {
        const double v = p(i, k);
        if (v > 0.0) kl_sum += v * (std::log(v) - std::log(marginal(k)));
      }
    total += std::exp(kl_sum / static_cast<double>(end - begin));
  }
  return total / splits;
}

double metric_value(const MetricsReport& r, int column) {
  switch (column) {
    case 0: return r.clip;
    case 1: return r.psnr;
    case 2: return r.ssim;
    case 3: return r.msssim;
    case 4: return r.fid;
    case 5: return r.is_score;
  }
  fail(ErrorCode::InvalidArgument, "metric column out of range");
}

double& metric_value(MetricsReport& r, int column) {
  switch (column) {
    case 0: return r.clip;
    case 1: return r.psnr;
    case 2: return r.ssim;
    case 3: return r.msssim;
    case 4: return r.fid;
    case 5: return r.is_score;
  }
  fail(ErrorCode::InvalidArgument, "metric column out of range");
}

namespace {

nlohmann::json number_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    fail(ErrorCode::InvalidArgument, "unexpected metric value '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json::object();
  j["model"] = r.model;
  j["condition"] = r.condition;
  j["dataset"] = r.dataset;
  j["transfer"] = r.transfer;
  for (int c = 0; c < 6; ++c) j[kMetricColumns[c]] = number_json(metric_value(r, c));
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  r = MetricsReport{};
  r.model = j.value("model", "");
  r.condition = j.value("condition", "");
  r.dataset = j.value("dataset", "");
  r.transfer = j.value("transfer", "");
  for (int c = 0; c < 6; ++c) metric_value(r, c) = number_from_json(j.at(kMetricColumns[c]));
}

MetricsReport evaluate_condition(std::span<const RgbImage> benign_out, std::span<const RgbImage> adv_out,
                                 std::span<const std::string> prompts, const EvaluationClients& clients,
                                 std::span<const RgbImage> fid_reference) {
  require(!adv_out.empty(), ErrorCode::EmptyInput, "evaluate_condition: no adversarial outputs");
  require(benign_out.size() == adv_out.size() && prompts.size() == adv_out.size(), ErrorCode::InvalidArgument,
          "evaluate_condition: benign, adversarial and prompt lists must align");
  require(clients.scorer != nullptr, ErrorCode::ScorerUnavailable, "evaluate_condition: no scorer");
  require(clients.extractor != nullptr, ErrorCode::ExtractorMismatch, "evaluate_condition: no feature extractor");
  require(clients.classifier != nullptr, ErrorCode::ExtractorMismatch, "evaluate_condition: no classifier");

  MetricsReport r;
  r.clip = clip_score(adv_out, prompts, *clients.scorer);
  double p = 0.0, s = 0.0, ms = 0.0;
  for (std::size_t i = 0; i < adv_out.size(); ++i) {
    p += psnr(benign_out[i], adv_out[i]);
    s += ssim(benign_out[i], adv_out[i]);
    ms += msssim(benign_out[i], adv_out[i]);
  }
  const auto n = static_cast<double>(adv_out.size());
  r.psnr = p / n;
  r.ssim = s / n;
  r.msssim = ms / n;

  const auto reference = fid_reference.empty() ? benign_out : fid_reference;
  if (adv_out.size() >= 2 && reference.size() >= 2) {
    r.fid = fid(clients.extractor->extract(reference), clients.extractor->extract(adv_out));
  } else {
    r.fid = std::numeric_limits<double>::quiet_NaN();
  }
  r.is_score = inception_score(clients.classifier->classify(adv_out),
                               std::min<int>(clients.is_splits, static_cast<int>(adv_out.size())));
  return r;
}

}  // namespace ldmrb
