#pragma once

// Desk-scale evaluation: Frechet distance between Gaussian fits (FID in data
// space), ground-truth posterior alignment (CLIP-score stand-in), and the
// timestep mask-position study.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskunet/data.hpp"
#include "maskunet/error.hpp"
#include "maskunet/mask_generator.hpp"
#include "maskunet/masking.hpp"
#include "maskunet/random.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

struct SampleSet {
    Tensor points;           // [M, D]
    std::vector<int> labels; // empty when unlabeled
    std::string provenance;

    std::size_t size() const { return points.defined() ? points.dim(0) : 0; }
    std::size_t dim() const { return points.defined() ? points.dim(1) : 0; }
};

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Sample mean and unbiased covariance.
inline GaussianFit fit_gaussian(const SampleSet& s) {
    if (!s.points.defined() || s.points.rank() != 2) throw DimensionError("fit_gaussian: expected [M, D] points");
    const std::size_t m = s.size(), d = s.dim();
    if (m < 2) throw ContractError("fit_gaussian: need at least 2 points, got " + std::to_string(m));
    const auto v = s.points.data();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        v.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    GaussianFit g;
    g.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / static_cast<double>(m - 1);
    return g;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, const char* what) {
    const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-10) throw NumericError(std::string(what) + ": matrix is not positive semidefinite");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Eigen::MatrixXd jitter_if_singular(Eigen::MatrixXd c) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 1e-12) c.diagonal().array() += 1e-10;
    return c;
}

} // namespace detail

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)
inline double frechet_gaussian(const GaussianFit& a, const GaussianFit& b) {
    if (a.mean.size() != b.mean.size()) throw DimensionError("frechet_gaussian: dimension mismatch");
    const Eigen::MatrixXd ca = detail::jitter_if_singular(a.cov);
    const Eigen::MatrixXd cb = detail::jitter_if_singular(b.cov);
    const Eigen::MatrixXd sa = detail::psd_sqrt(ca, "frechet_gaussian");
    const Eigen::MatrixXd inner = sa * cb * sa;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double ev = es.eigenvalues()[i];
        if (ev < -1e-10) throw NumericError("frechet_gaussian: negative eigenvalue in covariance product");
        tr_sqrt += std::sqrt(std::max(ev, 0.0));
    }
    const double dist = (a.mean - b.mean).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    return std::max(dist, 0.0);
}

inline double frechet_gaussian(const SampleSet& a, const SampleSet& b) {
    if (a.dim() != b.dim()) {
        throw DimensionError("frechet_gaussian: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                             std::to_string(b.dim()));
    }
    return frechet_gaussian(fit_gaussian(a), fit_gaussian(b));
}

// Mean posterior probability of each sample's own conditioning component.
inline double alignment_score(const SampleSet& s, const MixtureSpec& mix) {
    if (s.labels.empty() || s.labels.size() != s.size()) throw ContractError("alignment_score: samples need labels");
    if (s.dim() != mix.dim()) throw DimensionError("alignment_score: sample/mixture dimension mismatch");
    const auto v = s.points.data();
    const std::size_t d = s.dim();
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const int c = s.labels[i];
        (void)mix.mean_of(c);
        const auto post = mixture_posterior(mix, v.subspan(i * d, d));
        total += post[static_cast<std::size_t>(c)];
    }
    return total / static_cast<double>(s.size());
}

// ---------------------------------------------------------------------------
// Mask-position study

struct MaskSnapshot {
    int timestep = 0;
    std::string layer_id;
    std::vector<std::uint8_t> bits; // one entry per mask element, 0 or 1
    double ratio = 0.0;             // fraction of zero bits
};

struct LayerMaskSummary {
    std::string layer_id;
    std::vector<int> timesteps;
    std::vector<double> ratios;
    std::vector<std::vector<std::size_t>> hamming; // pairwise over timesteps
    double ratio_mean = 0.0;
    double ratio_variance = 0.0;
    double ratio_std = 0.0;
    std::size_t max_hamming = 0;
};

struct MaskStudy {
    std::vector<MaskSnapshot> snapshots;
    std::vector<LayerMaskSummary> summary;
};

inline MaskSnapshot make_snapshot(int t, const std::string& layer, const MaskTensor& m) {
    MaskSnapshot s;
    s.timestep = t;
    s.layer_id = layer;
    s.ratio = mask_ratio(m);
    for (double v : m.values.data()) s.bits.push_back(v != 0.0 ? 1 : 0);
    return s;
}

inline std::size_t hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw DimensionError("hamming_distance: length mismatch");
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i] ? 1 : 0;
    return n;
}

// Hard masks for a fixed probe z at each timestep. One logistic-noise draw per
// layer is shared by all timesteps, so any change in mask positions comes from
// the generator's dependence on t.
inline MaskStudy mask_study(const std::vector<MaskGenerator>& gens, std::span<const int> timesteps,
                            const Tensor& probe, std::uint64_t seed) {
    MaskStudy study;
    for (std::size_t gi = 0; gi < gens.size(); ++gi) {
        const auto& gen = gens[gi];
        const auto& cfg = gen.config();
        const std::size_t batch = probe.dim(0);
        Rng rng(derive_seed(seed, {0x4d53u, gi}));
        const Tensor noise = logistic_noise(Shape{batch, static_cast<std::size_t>(cfg.out_rows),
                                                  static_cast<std::size_t>(cfg.out_cols)},
                                            rng);
        LayerMaskSummary sum;
        sum.layer_id = cfg.layer_id;
        std::vector<MaskSnapshot> snaps;
        for (int t : timesteps) {
            const std::vector<int> tv(batch, t);
            const Tensor logits = generator_logits(gen, tv, probe.detach()).detach();
            const MaskTensor m = gumbel_sigmoid(logits, noise, cfg.tau, cfg.delta, true);
            snaps.push_back(make_snapshot(t, cfg.layer_id, m));
            sum.timesteps.push_back(t);
            sum.ratios.push_back(snaps.back().ratio);
        }
        const std::size_t n = snaps.size();
        sum.hamming.assign(n, std::vector<std::size_t>(n, 0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const auto h = hamming_distance(snaps[i].bits, snaps[j].bits);
                sum.hamming[i][j] = sum.hamming[j][i] = h;
                sum.max_hamming = std::max(sum.max_hamming, h);
            }
        if (n > 0) {
            for (double r : sum.ratios) sum.ratio_mean += r;
            sum.ratio_mean /= static_cast<double>(n);
            for (double r : sum.ratios) sum.ratio_variance += (r - sum.ratio_mean) * (r - sum.ratio_mean);
            sum.ratio_variance /= static_cast<double>(n);
            sum.ratio_std = std::sqrt(sum.ratio_variance);
        }
        study.summary.push_back(std::move(sum));
        for (auto& s : snaps) study.snapshots.push_back(std::move(s));
    }
    return study;
}

} // namespace maskunet
