// SPDX-License-Identifier: Apache-2.0
#include "hetplan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "hetplan/errors.hpp"

namespace hetplan {

std::int64_t GradFixture::global_batch() const {
  std::int64_t b = 0;
  for (const auto& g : per_gpu) b += static_cast<std::int64_t>(g.size());
  return b;
}

std::size_t GradFixture::dimension() const {
  for (const auto& g : per_gpu) {
    if (!g.empty()) return g.front().size();
  }
  return 0;
}

namespace {

void check_fixture(const GradFixture& f) {
  if (f.per_gpu.empty()) throw ValidationError("gradient fixture has no GPUs");
  const std::size_t d = f.dimension();
  for (std::size_t i = 0; i < f.per_gpu.size(); ++i) {
    if (f.per_gpu[i].empty()) {
      throw ValidationError("GPU " + std::to_string(i) + " holds no samples (b_i must be at least 1)");
    }
    for (const auto& g : f.per_gpu[i]) {
      if (g.size() != d) {
        throw ValidationError("gradient dimension mismatch on GPU " + std::to_string(i) + ": " +
                              std::to_string(g.size()) + " vs " + std::to_string(d));
      }
    }
  }
}

}  // namespace

GradVector weighted_combine(const GradFixture& fixture) {
  check_fixture(fixture);
  const double n = static_cast<double>(fixture.per_gpu.size());
  const double batch = static_cast<double>(fixture.global_batch());
  const std::size_t d = fixture.dimension();
  GradVector out(d, 0.0);
  for (const auto& gpu : fixture.per_gpu) {
    const double b = static_cast<double>(gpu.size());
    GradVector local(d, 0.0);
    for (const auto& g : gpu) {
      for (std::size_t k = 0; k < d; ++k) local[k] += g[k];
    }
    const double weight = n * b / batch;
    for (std::size_t k = 0; k < d; ++k) out[k] += weight * (local[k] / b);
  }
  for (auto& v : out) v /= n;
  return out;
}

GradVector global_mean(const GradFixture& fixture) {
  check_fixture(fixture);
  const std::size_t d = fixture.dimension();
  GradVector out(d, 0.0);
  for (const auto& gpu : fixture.per_gpu) {
    for (const auto& g : gpu) {
      for (std::size_t k = 0; k < d; ++k) out[k] += g[k];
    }
  }
  const double batch = static_cast<double>(fixture.global_batch());
  for (auto& v : out) v /= batch;
  return out;
}

double max_relative_error(const GradVector& a, const GradVector& b) {
  if (a.size() != b.size()) throw ValidationError("gradient vectors differ in dimension");
  double scale = 0, diff = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    scale = std::max(scale, std::abs(b[k]));
    diff = std::max(diff, std::abs(a[k] - b[k]));
  }
  if (scale == 0) return diff;
  return diff / scale;
}

GradFixture random_grad_fixture(std::uint64_t seed, std::size_t max_gpus, std::int64_t max_local_batch,
                                std::size_t max_dim) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> gpus(1, std::max<std::size_t>(max_gpus, 1));
  std::uniform_int_distribution<std::int64_t> local(1, std::max<std::int64_t>(max_local_batch, 1));
  std::uniform_int_distribution<std::size_t> dims(1, std::max<std::size_t>(max_dim, 1));
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  GradFixture f;
  const std::size_t n = gpus(rng);
  const std::size_t d = dims(rng);
  f.per_gpu.resize(n);
  for (auto& gpu : f.per_gpu) {
    gpu.resize(static_cast<std::size_t>(local(rng)));
    for (auto& g : gpu) {
      g.resize(d);
      for (auto& v : g) v = value(rng);
    }
  }
  return f;
}

}  // namespace hetplan
