#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "onemap/error.hpp"
#include "onemap/features.hpp"
#include "onemap/grid.hpp"

namespace onemap {

inline constexpr const char* kVoidLabel = "void";

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += double(a[k]) * b[k];
  return s;
}

inline void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

inline std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

inline std::vector<double> random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = g(rng);
  normalize(v);
  return v;
}

// Removes the components of v along every vector in `basis` (modified
// Gram-Schmidt against an orthonormalised copy of the basis).
inline void project_out(std::vector<double>& v, const std::vector<std::vector<float>>& basis) {
  std::vector<std::vector<double>> ortho;
  for (const auto& b : basis) {
    std::vector<double> u(b.begin(), b.end());
    for (const auto& o : ortho) {
      double d = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) d += u[k] * o[k];
      for (std::size_t k = 0; k < u.size(); ++k) u[k] -= d * o[k];
    }
    double n = 0.0;
    for (double x : u) n += x * x;
    if (n < 1e-20) continue;
    n = std::sqrt(n);
    for (double& x : u) x /= n;
    ortho.push_back(std::move(u));
  }
  for (const auto& o : ortho) {
    double d = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) d += v[k] * o[k];
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= d * o[k];
  }
}

}  // namespace detail

/// Synthetic stand-in for a vision-language embedding space: one unit vector
/// per text label with bounded pairwise similarity, plus a background vector
/// orthogonal to every label for walls and floor.
class Codebook {
 public:
  Codebook() = default;

  /// Draws label vectors at random, rejecting any whose cosine to an earlier
  /// label exceeds `distractor_overlap`. After 256 rejected draws the
  /// candidate is orthogonalised against all earlier labels instead.
  Codebook(std::vector<std::string> labels, int dim, double distractor_overlap, double noise_sigma,
           std::uint64_t seed)
      : labels_(std::move(labels)), dim_(dim), distractor_overlap_(distractor_overlap), noise_sigma_(noise_sigma) {
    if (dim <= 0) throw InvalidArgument("codebook dimension must be positive");
    if (!(distractor_overlap >= 0.0 && distractor_overlap < 1.0))
      throw InvalidArgument("distractor_overlap must lie in [0, 1)");
    if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be non-negative");
    if (static_cast<int>(labels_.size()) + 1 > dim)
      throw InvalidArgument("codebook needs more dimensions than labels");
    for (std::size_t a = 0; a < labels_.size(); ++a) {
      if (labels_[a] == kVoidLabel) throw InvalidArgument("'void' is a reserved label");
      for (std::size_t b = 0; b < a; ++b)
        if (labels_[a] == labels_[b]) throw InvalidArgument("duplicate codebook label: " + labels_[a]);
    }
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < labels_.size(); ++n) {
      std::vector<double> v;
      bool ok = false;
      for (int attempt = 0; attempt < 256 && !ok; ++attempt) {
        v = detail::random_unit(rng, dim);
        ok = true;
        for (const auto& prev : vectors_) {
          double d = 0.0;
          for (int k = 0; k < dim; ++k) d += v[k] * prev[k];
          if (d > distractor_overlap) {
            ok = false;
            break;
          }
        }
      }
      if (!ok) {
        detail::project_out(v, vectors_);
        detail::normalize(v);
      }
      vectors_.push_back(detail::to_float(v));
    }
    std::vector<double> bg = detail::random_unit(rng, dim);
    detail::project_out(bg, vectors_);
    detail::normalize(bg);
    background_ = detail::to_float(bg);
  }

  int dim() const { return dim_; }
  double noise_sigma() const { return noise_sigma_; }
  double distractor_overlap() const { return distractor_overlap_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<float>& background() const { return background_; }

  bool contains(const std::string& label) const {
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
  }

  /// Unit vector of a label, or the background vector for "void".
  const std::vector<float>& vector(const std::string& label) const {
    if (label == kVoidLabel) return background_;
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) throw NotFound("label not in codebook: " + label);
    return vectors_[static_cast<std::size_t>(it - labels_.begin())];
  }

  const std::vector<std::vector<float>>& vectors() const { return vectors_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dim"] = dim_;
    j["noise_sigma"] = noise_sigma_;
    j["distractor_overlap"] = distractor_overlap_;
    j["labels"] = nlohmann::json::array();
    for (std::size_t n = 0; n < labels_.size(); ++n)
      j["labels"].push_back({{"label", labels_[n]}, {"vector", vectors_[n]}});
    j["void"] = background_;
    return j;
  }

  static Codebook from_json(const nlohmann::json& j) {
    Codebook cb;
    try {
      cb.dim_ = j.at("dim").get<int>();
      cb.noise_sigma_ = j.at("noise_sigma").get<double>();
      cb.distractor_overlap_ = j.at("distractor_overlap").get<double>();
      for (const auto& e : j.at("labels")) {
        cb.labels_.push_back(e.at("label").get<std::string>());
        cb.vectors_.push_back(e.at("vector").get<std::vector<float>>());
        if (static_cast<int>(cb.vectors_.back().size()) != cb.dim_)
          throw SchemaError("codebook vector for '" + cb.labels_.back() + "' has wrong dimension");
      }
      cb.background_ = j.at("void").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("codebook: ") + e.what());
    }
    if (static_cast<int>(cb.background_.size()) != cb.dim_)
      throw SchemaError("codebook background vector has wrong dimension");
    return cb;
  }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::vector<std::string> labels_;
  int dim_ = 0;
  double distractor_overlap_ = 0.0;
  double noise_sigma_ = 0.0;
  std::vector<std::vector<float>> vectors_;
  std::vector<float> background_;
};

/// Query embedding of a text label. Queries carry no noise.
inline std::vector<float> embed_text(const Codebook& codebook, const std::string& label) {
  if (!codebook.contains(label)) throw NotFound("label not in codebook: " + label);
  return codebook.vector(label);
}

/// Image-encoder stand-in: each patch is its label's vector plus isotropic
/// Gaussian noise, renormalised. The noise is scaled by 1/sqrt(dim) per
/// component so `noise_sigma` is the expected noise norm. "void" patches are
/// built the same way around the fixed background vector.
inline FeatureFrame synth_embed_frame(const Codebook& codebook, const Grid<std::string>& label_image,
                                      std::uint64_t seed) {
  const int hf = label_image.ny();
  const int wf = label_image.nx();
  const int f = codebook.dim();
  FeatureFrame frame(hf, wf, f);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, codebook.noise_sigma() / std::sqrt(double(f)));
  std::vector<double> v(f);
  for (int i = 0; i < hf; ++i) {
    for (int j = 0; j < wf; ++j) {
      auto dst = frame.at(i, j);
      const auto& base = codebook.vector(label_image(j, i));
      if (codebook.noise_sigma() == 0.0) {
        std::copy(base.begin(), base.end(), dst.begin());
        continue;
      }
      for (int k = 0; k < f; ++k) v[k] = base[k] + noise(rng);
      detail::normalize(v);
      for (int k = 0; k < f; ++k) dst[k] = static_cast<float>(v[k]);
    }
  }
  return frame;
}

}  // namespace onemap
