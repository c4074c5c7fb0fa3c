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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace ldmrb::testing {

namespace {

using Plane = std::vector<std::vector<long double>>;

Plane plane(const RgbImage& img, int c) {
  Plane p(static_cast<std::size_t>(img.height()), std::vector<long double>(static_cast<std::size_t>(img.width())));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) p[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = img.at(y, x, c);
  return p;
}

Plane window2d() {
  Plane w(11, std::vector<long double>(11));
  long double sum = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const long double di = i - 5, dj = j - 5;
      w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::exp(-(di * di + dj * dj) / (2 * 1.5L * 1.5L));
      sum += w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  for (auto& row : w)
    for (auto& v : row) v /= sum;
  return w;
}

// mean SSIM and mean contrast-structure term over valid windows
std::pair<long double, long double> ssim_cs(const Plane& a, const Plane& b) {
  static const Plane w = window2d();
  const long double c1 = 1e-4L, c2 = 9e-4L;
  const std::size_t h = a.size(), wd = a[0].size();
  long double s_sum = 0, cs_sum = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 11 <= h; ++y)
    for (std::size_t x = 0; x + 11 <= wd; ++x) {
      long double ma = 0, mb = 0;
      for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
          ma += w[i][j] * a[y + i][x + j];
          mb += w[i][j] * b[y + i][x + j];
        }
      long double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
          const long double da = a[y + i][x + j] - ma, db = b[y + i][x + j] - mb;
          va += w[i][j] * da * da;
          vb += w[i][j] * db * db;
          cov += w[i][j] * da * db;
        }
      const long double cs = (2 * cov + c2) / (va + vb + c2);
      s_sum += (2 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
      cs_sum += cs;
      ++n;
    }
  return {s_sum / n, cs_sum / n};
}

Plane halve(const Plane& p) {
  Plane out(p.size() / 2, std::vector<long double>(p[0].size() / 2));
  for (std::size_t y = 0; y < out.size(); ++y)
    for (std::size_t x = 0; x < out[0].size(); ++x)
      out[y][x] = (p[2 * y][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x] + p[2 * y + 1][2 * x + 1]) / 4;
  return out;
}

Matrix covariance(const Matrix& x, std::vector<long double>& mean) {
  const std::size_t n = x.size(), d = x[0].size();
  mean.assign(d, 0);
  for (const auto& row : x)
    for (std::size_t k = 0; k < d; ++k) mean[k] += row[k] / n;
  Matrix c(d, std::vector<long double>(d, 0));
  for (const auto& row : x)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) c[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1);
  return c;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size(), m = b[0].size(), k = b.size();
  Matrix c(n, std::vector<long double>(m, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][t] * b[t][j];
  return c;
}

Matrix sqrt_psd(const Matrix& a) {
  std::vector<long double> vals;
  Matrix vecs;
  jacobi_eigen(a, vals, vecs);
  const std::size_t n = a.size();
  Matrix r(n, std::vector<long double>(n, 0));
  for (std::size_t k = 0; k < n; ++k) {
    const long double s = std::sqrt(std::max(vals[k], 0.0L));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) r[i][j] += s * vecs[i][k] * vecs[j][k];
  }
  return r;
}

}  // namespace

long double ssim_oracle(const RgbImage& a, const RgbImage& b) {
  long double t = 0;
  for (int c = 0; c < 3; ++c) t += ssim_cs(plane(a, c), plane(b, c)).first;
  return t / 3;
}

long double msssim_oracle(const RgbImage& a, const RgbImage& b) {
  const long double weights[5] = {0.0448L, 0.2856L, 0.3001L, 0.2363L, 0.1333L};
  int scales = 0;
  for (int side = std::min(a.height(), a.width()); scales < 5 && side >= 11; side /= 2) ++scales;
  long double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += weights[s];
  long double total = 0;
  for (int c = 0; c < 3; ++c) {
    Plane pa = plane(a, c), pb = plane(b, c);
    long double v = 1;
    for (int s = 0; s < scales; ++s) {
      const auto [full, cs] = ssim_cs(pa, pb);
      const long double term = s == scales - 1 ? full : cs;
      v *= std::pow(std::max(term, 0.0L), weights[s] / wsum);
      pa = halve(pa);
      pb = halve(pb);
    }
    total += v;
  }
  return total / 3;
}

void jacobi_eigen(Matrix a, std::vector<long double>& values, Matrix& vectors) {
  const std::size_t n = a.size();
  vectors.assign(n, std::vector<long double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1;
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-36L) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300L) continue;
        const long double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const long double t = (theta >= 0 ? 1 : -1) / (std::fabs(theta) + std::sqrt(theta * theta + 1));
        const long double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const long double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double vkp = vectors[k][p], vkq = vectors[k][q];
          vectors[k][p] = c * vkp - s * vkq;
          vectors[k][q] = s * vkp + c * vkq;
        }
      }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

long double fid_oracle(const Matrix& x, const Matrix& y) {
  std::vector<long double> mx, my;
  const Matrix sx = covariance(x, mx), sy = covariance(y, my);
  const Matrix root = sqrt_psd(sx);
  const Matrix inner = multiply(multiply(root, sy), root);
  std::vector<long double> vals;
  Matrix vecs;
  jacobi_eigen(inner, vals, vecs);
  long double tr_sqrt = 0;
  for (auto v : vals) tr_sqrt += std::sqrt(std::max(v, 0.0L));
  long double d2 = 0, tr = 0;
  for (std::size_t k = 0; k < mx.size(); ++k) {
    d2 += (mx[k] - my[k]) * (mx[k] - my[k]);
    tr += sx[k][k] + sy[k][k];
  }
  return d2 + tr - 2 * tr_sqrt;
}

long double inception_score_oracle(const Matrix& probs, int splits) {
  const std::size_t per = probs.size() / static_cast<std::size_t>(splits);
  long double total = 0;
  for (int s = 0; s < splits; ++s) {
    const std::size_t begin = static_cast<std::size_t>(s) * per;
    const std::size_t end = s + 1 == splits ? probs.size() : begin + per;
    std::vector<long double> marginal(probs[0].size(), 0);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t k = 0; k < marginal.size(); ++k) marginal[k] += probs[i][k] / (end - begin);
    long double kl = 0;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t k = 0; k < marginal.size(); ++k)
        if (probs[i][k] > 0) kl += probs[i][k] * std::log(probs[i][k] / marginal[k]);
    total += std::exp(kl / (end - begin));
  }
  return total / splits;
}

}  // namespace ldmrb::testing
