#pragma once

// Evaluation metrics: CLIP-style alignment (clamped cosine), KID (unbiased
// squared MMD under a polynomial kernel) and mean/std aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "padprobe/matrix.hpp"

namespace padprobe {

enum class Normalizer : std::uint8_t { L2, None };

class FeatureSet {
public:
    FeatureSet(Matrix vectors, Normalizer normalizer, std::string extractor_id)
        : vectors_(std::move(vectors)), normalizer_(normalizer), extractor_id_(std::move(extractor_id)) {
        if (vectors_.rows() < 1) fail(ErrorCode::TooFewSamples, "feature set needs at least one row");
        if (normalizer_ == Normalizer::L2)
            for (std::size_t r = 0; r < vectors_.rows(); ++r)
                if (std::abs(linalg::norm(vectors_.row(r)) - 1.0) > 1e-6)
                    fail(ErrorCode::NotNormalized, "row " + std::to_string(r) + " is not unit length");
    }

    /// Normalizes every row to unit length.
    static FeatureSet l2(Matrix vectors, std::string extractor_id) {
        for (std::size_t r = 0; r < vectors.rows(); ++r) {
            auto n = linalg::normalized(vectors.row(r));
            std::copy(n.begin(), n.end(), vectors.row(r).begin());
        }
        return FeatureSet(std::move(vectors), Normalizer::L2, std::move(extractor_id));
    }

    const Matrix& vectors() const noexcept { return vectors_; }
    std::size_t size() const noexcept { return vectors_.rows(); }
    std::size_t dim() const noexcept { return vectors_.cols(); }
    Normalizer normalizer() const noexcept { return normalizer_; }
    const std::string& extractor_id() const noexcept { return extractor_id_; }

private:
    Matrix vectors_;
    Normalizer normalizer_;
    std::string extractor_id_;
};

inline constexpr double kUnitTolerance = 1e-5;

namespace detail {

inline void check_unit(std::span<const float> v, const char* what) {
    if (std::abs(linalg::norm(v) - 1.0) > kUnitTolerance)
        fail(ErrorCode::NotNormalized, std::string(what) + " is not unit-normalized");
}

}  // namespace detail

/// scale * max(cos(image, text), 0). Inputs must be unit vectors.
inline double clip_score(std::span<const float> image_feat, std::span<const float> text_feat,
                         double scale = 1.0) {
    if (image_feat.size() != text_feat.size() || image_feat.empty())
        fail(ErrorCode::DimensionMismatch, "feature dimensions differ");
    detail::check_unit(image_feat, "image feature");
    detail::check_unit(text_feat, "text feature");
    // Divide by the exact norms so that identical inputs give exactly 1.
    const double cos = linalg::dot(image_feat, text_feat) /
                       std::sqrt(linalg::dot(image_feat, image_feat) * linalg::dot(text_feat, text_feat));
    return scale * std::clamp(cos, 0.0, 1.0);
}

inline double clip_score_image_ref(std::span<const float> gen_feat, std::span<const float> ref_feat) {
    return clip_score(gen_feat, ref_feat, 1.0);
}

struct KidConfig {
    unsigned kernel_degree = 3;
    std::optional<double> kernel_gamma;  // unset means 1/f
    double kernel_coef0 = 1.0;
    std::optional<std::size_t> subset_size;
    std::optional<std::size_t> n_subsets;  // defaults to 100 when subsetting
    std::uint64_t seed = 0;

    void validate() const {
        if (kernel_degree < 1) fail(ErrorCode::InvalidArgument, "kernel degree must be >= 1");
        if (subset_size && *subset_size < 2) fail(ErrorCode::TooFewSamples, "subset size must be >= 2");
        if (n_subsets && *n_subsets < 1) fail(ErrorCode::InvalidArgument, "n_subsets must be >= 1");
    }
};

inline double polynomial_kernel(std::span<const float> a, std::span<const float> b, double gamma,
                                double coef0, unsigned degree) {
    const double base = gamma * linalg::dot(a, b) + coef0;
    double out = base;
    for (unsigned i = 1; i < degree; ++i) out *= base;
    return out;
}

namespace detail {

// Unbiased MMD^2 over the rows named by the index lists. With equal sizes the
// cross term also skips i == j, so identical paired sets cancel term by term.
inline double mmd2_unbiased(const Matrix& x, std::span<const std::size_t> xi, const Matrix& y,
                            std::span<const std::size_t> yi, double gamma, double coef0, unsigned degree) {
    auto k = [&](const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
        return polynomial_kernel(a.row(i), b.row(j), gamma, coef0, degree);
    };
    const std::size_t m = xi.size();
    const std::size_t n = yi.size();
    if (m == n) {
        double sum = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                if (i == j) continue;
                sum += k(x, xi[i], x, xi[j]) + k(y, yi[i], y, yi[j]) - k(x, xi[i], y, yi[j]) -
                       k(x, xi[j], y, yi[i]);
            }
        return sum / (static_cast<double>(m) * static_cast<double>(m - 1));
    }
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) sxx += k(x, xi[i], x, xi[j]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) syy += k(y, yi[i], y, yi[j]);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) sxy += k(x, xi[i], y, yi[j]);
    const double dm = static_cast<double>(m), dn = static_cast<double>(n);
    return sxx / (dm * (dm - 1)) + syy / (dn * (dn - 1)) - 2.0 * sxy / (dm * dn);
}

}  // namespace detail

/// Kernel Inception Distance between two feature sets. Negative estimates are
/// returned as-is.
inline double kid(const Matrix& x, const Matrix& y, const KidConfig& cfg = {}) {
    cfg.validate();
    if (x.cols() != y.cols()) fail(ErrorCode::DimensionMismatch, "feature dimensions differ");
    if (x.rows() < 2 || y.rows() < 2) fail(ErrorCode::TooFewSamples, "KID needs at least 2 samples per set");
    const double gamma = cfg.kernel_gamma.value_or(1.0 / static_cast<double>(x.cols()));

    auto iota = [](std::size_t n) {
        std::vector<std::size_t> v(n);
        std::iota(v.begin(), v.end(), std::size_t{0});
        return v;
    };
    if (!cfg.subset_size) {
        const auto xi = iota(x.rows());
        const auto yi = iota(y.rows());
        return detail::mmd2_unbiased(x, xi, y, yi, gamma, cfg.kernel_coef0, cfg.kernel_degree);
    }

    const std::size_t s = *cfg.subset_size;
    if (x.rows() < s || y.rows() < s)
        fail(ErrorCode::TooFewSamples, "subset size " + std::to_string(s) + " exceeds set size");
    const std::size_t reps = cfg.n_subsets.value_or(100);
    std::mt19937_64 rng(cfg.seed);
    auto xi = iota(x.rows());
    auto yi = iota(y.rows());
    double total = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        std::shuffle(xi.begin(), xi.end(), rng);
        std::shuffle(yi.begin(), yi.end(), rng);
        total += detail::mmd2_unbiased(x, std::span(xi).first(s), y, std::span(yi).first(s), gamma,
                                       cfg.kernel_coef0, cfg.kernel_degree);
    }
    return total / static_cast<double>(reps);
}

inline double kid(const FeatureSet& x, const FeatureSet& y, const KidConfig& cfg = {}) {
    return kid(x.vectors(), y.vectors(), cfg);
}

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 when n == 1
    std::size_t n = 0;
};

inline Aggregate aggregate(std::span<const double> scores) {
    if (scores.empty()) fail(ErrorCode::EmptyInput, "cannot aggregate an empty score list");
    // Welford updates keep a constant input exactly constant.
    double mean = 0.0, m2 = 0.0;
    std::size_t k = 0;
    for (double v : scores) {
        ++k;
        const double delta = v - mean;
        mean += delta / static_cast<double>(k);
        m2 += delta * (v - mean);
    }
    if (k == 1) return {mean, 0.0, 1};
    return {mean, std::sqrt(m2 / static_cast<double>(k - 1)), k};
}

}  // namespace padprobe
