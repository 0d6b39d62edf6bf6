#pragma once
// Per-coefficient mixed model with spike-and-slab fixed effects.
//
// Each retained coefficient column k carries d = X beta + Z u + e with
// u ~ N(0, q I) and e ~ N(0, s I). The random effects are integrated out of
// every update through the marginal covariance sI + q ZZ', whose one-per-image
// unit structure keeps all products O(N + m). Per sweep: a Gibbs pass over
// covariates drawing (gamma_a, beta_a) from the marginal model, a conjugate
// draw of u, and a joint Metropolis step on (log q, log s) against inverse
// gamma priors centered at the moment starting values.

#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <utility>

#include "compress.hpp"
#include "design.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace isofmm {

// (covariate, scale, orient) -> shrinkage prior for that band
using GroupKey = std::tuple<int, int, int>;

struct BandHyper {
    double pi = 0.5;
    double tau = 0.0;
};

struct Hyperparams {
    std::map<GroupKey, BandHyper> groups;
    double ig_shape = 1.0;  // prior shape for both variance components

    const BandHyper& lookup(int a, std::pair<int, int> band) const {
        auto it = groups.find(GroupKey{a, band.first, band.second});
        if (it == groups.end())
            throw data_error("no shrinkage hyperparameters for covariate " + std::to_string(a + 1) +
                             " band (" + std::to_string(band.first) + "," +
                             std::to_string(band.second) + ")");
        return it->second;
    }
};

// Moment starting values and GLS estimates for one column.
struct ColumnInit {
    Eigen::VectorXd beta_hat;  // p
    Eigen::VectorXd v_hat;     // p, sampling variances of beta_hat
    double q0 = 0.0;
    double s0 = 0.0;
};

namespace detail {

// Quadratic forms used by the moment equations: within-unit and between-unit
// sums of squares of the projected residual.
inline void unit_sums(const DesignWork& dw, const Eigen::VectorXd& r, std::vector<double>& tb) {
    tb.assign(std::size_t(dw.m), 0.0);
    for (int i = 0; i < dw.N; ++i)
        if (dw.unit_of[std::size_t(i)] >= 0) tb[std::size_t(dw.unit_of[std::size_t(i)])] += r(i);
}

}  // namespace detail

// Moment estimates of (q, s) plus GLS estimates of beta for one data column.
//
// The residual projector M annihilates X, so for r = Md and any symmetric A,
// E[r'Ar] = s tr(M'AM) + q tr(M'AM ZZ'). Taking A as the within-unit centering
// projector and its complement gives two linear equations solved exactly; one
// GLS reweighting pass refines the projector (a no-op for balanced designs).
inline ColumnInit init_column(const Eigen::VectorXd& d, const DesignWork& dw) {
    const double energy = d.squaredNorm();
    const double floor_val = 1e-10 * std::max(energy, 1e-300);
    ColumnInit out;
    if (dw.m == 0) {
        Eigen::MatrixXd XtX = dw.X.transpose() * dw.X;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(XtX);
        out.beta_hat = ldlt.solve(dw.X.transpose() * d);
        const Eigen::VectorXd r = d - dw.X * out.beta_hat;
        out.s0 = std::max(r.squaredNorm() / double(dw.N - dw.p), floor_val);
        out.q0 = floor_val;
        Eigen::MatrixXd XtXinv = ldlt.solve(Eigen::MatrixXd::Identity(dw.p, dw.p));
        out.v_hat = out.s0 * XtXinv.diagonal();
        return out;
    }
    double q = 0.0, s = 1.0;
    Eigen::MatrixXd cov_inv;
    for (int pass = 0; pass < 2; ++pass) {
        Eigen::MatrixXd Sinv;
        if (pass == 0)
            Sinv = Eigen::MatrixXd::Identity(dw.N, dw.N);
        else
            Sinv = dw.sigma(q, s).ldlt().solve(Eigen::MatrixXd::Identity(dw.N, dw.N));
        Eigen::MatrixXd XtSiX = dw.X.transpose() * Sinv * dw.X;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(XtSiX);
        Eigen::VectorXd beta = ldlt.solve(dw.X.transpose() * (Sinv * d));
        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(dw.N, dw.N) -
                            dw.X * ldlt.solve(dw.X.transpose() * Sinv);
        Eigen::VectorXd r = d - dw.X * beta;
        std::vector<double> tb;
        detail::unit_sums(dw, r, tb);
        double Qb = 0.0;
        for (int b = 0; b < dw.m; ++b) Qb += tb[std::size_t(b)] * tb[std::size_t(b)] / dw.nb[std::size_t(b)];
        const double Qw = r.squaredNorm() - Qb;
        // B = Z diag(1/nb) Z' (between projector), W = I - B
        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(dw.N, dw.N);
        for (int b = 0; b < dw.m; ++b)
            for (int i : dw.members[std::size_t(b)])
                for (int j : dw.members[std::size_t(b)]) B(i, j) = 1.0 / dw.nb[std::size_t(b)];
        Eigen::MatrixXd ZZt = Eigen::MatrixXd::Zero(dw.N, dw.N);
        for (int b = 0; b < dw.m; ++b)
            for (int i : dw.members[std::size_t(b)])
                for (int j : dw.members[std::size_t(b)]) ZZt(i, j) = 1.0;
        Eigen::MatrixXd MtM = M.transpose() * M;
        Eigen::MatrixXd MtBM = M.transpose() * B * M;
        Eigen::MatrixXd MtWM = MtM - MtBM;
        const double a11 = MtWM.trace(), a12 = (MtWM * ZZt).trace();
        const double a21 = MtBM.trace(), a22 = (MtBM * ZZt).trace();
        const double det = a11 * a22 - a12 * a21;
        double s_new, q_new;
        if (std::abs(det) < 1e-12 * (std::abs(a11 * a22) + std::abs(a12 * a21) + 1e-300)) {
            // degenerate partition (e.g. one image per unit): split the
            // residual mean square evenly
            const double ms = r.squaredNorm() / std::max(1, dw.N - dw.p);
            s_new = q_new = 0.5 * ms;
        } else {
            s_new = (Qw * a22 - a12 * Qb) / det;
            q_new = (a11 * Qb - Qw * a21) / det;
        }
        s = std::max(s_new, floor_val);
        q = std::max(q_new, floor_val);
        if (pass == 1) {
            out.beta_hat = beta;
            cov_inv = XtSiX;
        }
    }
    // final GLS pass under the settled (q, s)
    Eigen::MatrixXd Sinv = dw.sigma(q, s).ldlt().solve(Eigen::MatrixXd::Identity(dw.N, dw.N));
    Eigen::MatrixXd XtSiX = dw.X.transpose() * Sinv * dw.X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(XtSiX);
    out.beta_hat = ldlt.solve(dw.X.transpose() * (Sinv * d));
    out.v_hat = ldlt.solve(Eigen::MatrixXd::Identity(dw.p, dw.p)).diagonal();
    out.q0 = q;
    out.s0 = s;
    return out;
}

inline std::vector<ColumnInit> init_estimates(const RetainedMatrix& rm, const DesignWork& dw,
                                              unsigned workers = 0) {
    if (rm.n_images != std::size_t(dw.N)) throw data_error("design rows do not match image count");
    std::vector<ColumnInit> out(rm.positions.size());
    if (workers == 0) workers = worker_count();
    parallel_for(rm.positions.size(), workers, [&](std::size_t j) {
        Eigen::VectorXd d(dw.N);
        for (int i = 0; i < dw.N; ++i) d(i) = rm.value(std::size_t(i), j);
        out[j] = init_column(d, dw);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Empirical Bayes band hyperparameters.

namespace detail {

// Weighted slab-variance stationary condition: sum w (bhat^2 - (tau+V)) /
// (tau+V)^2 = 0, solved by bisection on [0, max bhat^2].
inline double solve_tau(const std::vector<double>& bhat, const std::vector<double>& vhat,
                        const std::vector<double>& w) {
    auto g = [&](double tau) {
        double acc = 0.0;
        for (std::size_t k = 0; k < bhat.size(); ++k) {
            const double tv = tau + vhat[k];
            acc += w[k] * (bhat[k] * bhat[k] - tv) / (tv * tv);
        }
        return acc;
    };
    double hi = 0.0;
    for (double b : bhat) hi = std::max(hi, b * b);
    if (hi <= 0.0) return 0.0;
    if (g(0.0) <= 0.0) return 0.0;
    double lo = 0.0;
    for (int it = 0; it < 200 && (hi - lo) > 1e-14 * (1.0 + hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct EmFit {
    double pi = 0.5;
    double tau = 0.0;
    bool converged = true;
    int iterations = 0;
};

// Mixture marginal likelihood EM for one band: bhat_k ~ pi N(0, tau + V_k) +
// (1-pi) N(0, V_k). pi is clipped to [1/K, 1-1/K]; fix_pi pins pi at 1 (the
// scaling band is always in the slab).
inline EmFit em_band(const std::vector<double>& bhat, const std::vector<double>& vhat,
                     bool fix_pi, int max_iter = 500) {
    const std::size_t K = bhat.size();
    EmFit fit;
    double mean_v = 0.0, mean_b2 = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        mean_v += vhat[k];
        mean_b2 += bhat[k] * bhat[k];
    }
    mean_v /= double(K);
    mean_b2 /= double(K);
    const double lo_clip = 1.0 / double(K), hi_clip = 1.0 - 1.0 / double(K);
    fit.pi = fix_pi ? 1.0 : std::min(hi_clip, std::max(lo_clip, 0.5));
    fit.tau = std::max(mean_b2 - mean_v, 0.01 * mean_v);
    std::vector<double> w(K, 1.0);
    for (int it = 1; it <= max_iter; ++it) {
        if (!fix_pi) {
            for (std::size_t k = 0; k < K; ++k) {
                const double V = vhat[k], tv = fit.tau + V;
                const double lr = -0.5 * std::log(tv / V) +
                                  bhat[k] * bhat[k] * fit.tau / (2.0 * V * tv);
                // w = pi e^lr / (pi e^lr + 1 - pi), computed stably
                const double z = std::log(fit.pi) - std::log1p(-fit.pi) + lr;
                w[k] = (z > 35.0) ? 1.0 : (z < -35.0 ? 0.0 : 1.0 / (1.0 + std::exp(-z)));
            }
        }
        double pi_new = fit.pi;
        if (!fix_pi) {
            double sw = 0.0;
            for (double x : w) sw += x;
            pi_new = std::min(hi_clip, std::max(lo_clip, sw / double(K)));
        }
        const double tau_new = solve_tau(bhat, vhat, w);
        const bool done = std::abs(pi_new - fit.pi) <= 1e-9 &&
                          std::abs(tau_new - fit.tau) <= 1e-9 * (1.0 + fit.tau);
        fit.pi = pi_new;
        fit.tau = tau_new;
        fit.iterations = it;
        if (done) return fit;
    }
    fit.converged = false;
    return fit;
}

}  // namespace detail

struct HyperEstimate {
    Hyperparams hyper;
    std::vector<std::string> warnings;
};

// Band grouping of the retained columns followed by per-band EM. Bands with
// fewer than 5 coefficients inherit the enclosing coarser detail band's fit,
// falling back to a pooled all-detail fit per covariate. Scaling bands get
// pi = 1 with tau from the all-slab likelihood.
inline HyperEstimate estimate_shrinkage_hyperparams(const std::vector<ColumnInit>& inits,
                                                    const std::vector<std::pair<int, int>>& bands,
                                                    int p, const WaveletSpec& spec) {
    if (inits.size() != bands.size()) throw data_error("init and band lists differ in length");
    if (inits.empty()) throw data_error("no retained columns to estimate hyperparameters from");
    const int J = spec.levels;
    HyperEstimate out;
    auto is_scaling = [&](std::pair<int, int> b) {
        return spec.kind == TransformKind::square ? (b.second == 0)
                                                  : (b.first == J + 1 && b.second == J + 1);
    };
    for (int a = 0; a < p; ++a) {
        std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<double>>> by_band;
        std::vector<double> pooled_b, pooled_v;
        for (std::size_t k = 0; k < inits.size(); ++k) {
            auto& slot = by_band[bands[k]];
            slot.first.push_back(inits[k].beta_hat(a));
            slot.second.push_back(inits[k].v_hat(a));
            if (!is_scaling(bands[k])) {
                pooled_b.push_back(inits[k].beta_hat(a));
                pooled_v.push_back(inits[k].v_hat(a));
            }
        }
        std::optional<BandHyper> pooled_fit;
        auto pooled = [&]() -> BandHyper {
            if (!pooled_fit) {
                if (pooled_b.size() >= 2) {
                    auto f = detail::em_band(pooled_b, pooled_v, false);
                    if (!f.converged)
                        out.warnings.push_back("EM for pooled details of covariate " +
                                               std::to_string(a + 1) + " hit the iteration cap");
                    pooled_fit = BandHyper{f.pi, f.tau};
                } else {
                    pooled_fit = BandHyper{0.5, pooled_b.empty() ? 0.0 : pooled_b[0] * pooled_b[0]};
                }
            }
            return *pooled_fit;
        };
        // coarse-to-fine so small bands can inherit an already-fitted parent
        std::vector<std::pair<int, int>> order;
        for (const auto& kv : by_band) order.push_back(kv.first);
        std::sort(order.begin(), order.end(), [](auto x, auto y) {
            return (x.first + x.second) > (y.first + y.second);
        });
        for (const auto& band : order) {
            const auto& [bh, vh] = by_band[band];
            BandHyper result;
            if (is_scaling(band)) {
                auto f = detail::em_band(bh, vh, true);
                if (!f.converged)
                    out.warnings.push_back("EM for scaling band of covariate " +
                                           std::to_string(a + 1) + " hit the iteration cap");
                result = BandHyper{1.0, f.tau};
            } else if (bh.size() < 5) {
                // inherit the coarser detail band; square keeps the
                // orientation, rectangular coarsens both axes
                std::optional<BandHyper> inherited;
                auto parent = band;
                for (int step = 0; step < J && !inherited; ++step) {
                    if (spec.kind == TransformKind::square)
                        parent = {parent.first + 1, parent.second};
                    else
                        parent = {std::min(parent.first + 1, J), std::min(parent.second + 1, J)};
                    auto it = out.hyper.groups.find(GroupKey{a, parent.first, parent.second});
                    if (it != out.hyper.groups.end()) inherited = it->second;
                }
                result = inherited ? *inherited : pooled();
            } else {
                auto f = detail::em_band(bh, vh, false);
                if (!f.converged)
                    out.warnings.push_back(
                        "EM for covariate " + std::to_string(a + 1) + " band (" +
                        std::to_string(band.first) + "," + std::to_string(band.second) +
                        ") hit the iteration cap");
                result = BandHyper{f.pi, f.tau};
            }
            out.hyper.groups[GroupKey{a, band.first, band.second}] = result;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// The sampler.

struct SamplerConfig {
    int burn_in = 1000;
    int iterations = 20000;
    int thin = 10;
    std::uint64_t seed = 20080501;
    double proposal_sd = 0.5;       // log-scale random walk scale
    bool adapt_proposal = true;     // Robbins-Monro during burn-in only
    double adapt_target = 0.35;
    bool fix_variances = false;     // hold (q, s) at their starting values
    unsigned workers = 0;           // 0: from environment

    void validate() const {
        if (burn_in < 0) throw config_error("burn_in must be nonnegative");
        if (iterations < 1) throw config_error("iterations must be positive");
        if (thin < 1) throw config_error("thin must be positive");
        if (thin > iterations) throw config_error("thin exceeds iterations; no draws would be kept");
        if (!(proposal_sd >= 0.0)) throw config_error("proposal_sd must be nonnegative");
    }
    std::size_t n_draws() const { return std::size_t(iterations / thin); }
};

struct SamplerState {
    Eigen::VectorXd beta;
    std::vector<std::uint8_t> gamma;
    Eigen::VectorXd u;
    double q = 1.0, s = 1.0;
    double log_prop_sd = 0.0;
    long mh_steps = 0, mh_accepts = 0;
};

// One column's bound sampler. Exposes the Gibbs pass and the variance step
// separately so each conditional can be exercised on its own.
class ColumnSampler {
  public:
    ColumnSampler(const DesignWork& dw, const double* data, const double* pi, const double* tau,
                  double q_prior_scale, double s_prior_scale, double ig_shape)
        : dw_(dw), d_(data), pi_(pi), tau_(tau), qscale_(q_prior_scale), sscale_(s_prior_scale),
          shape_(ig_shape), res_(dw.N), tb_(std::size_t(dw.m)), w_(std::size_t(dw.m)) {}

    SamplerState initial_state(const ColumnInit& init) const {
        SamplerState st;
        st.beta = init.beta_hat;
        st.gamma.assign(std::size_t(dw_.p), 1);
        st.u = Eigen::VectorXd::Zero(dw_.m);
        st.q = init.q0;
        st.s = init.s0;
        st.log_prop_sd = 0.0;  // filled by run_sampler from the config
        return st;
    }

    // refresh residual caches from the current beta
    void sync(const SamplerState& st) {
        for (int i = 0; i < dw_.N; ++i) res_(i) = d_[i];
        res_.noalias() -= dw_.X * st.beta;
        std::fill(tb_.begin(), tb_.end(), 0.0);
        for (int i = 0; i < dw_.N; ++i)
            if (dw_.unit_of[std::size_t(i)] >= 0) tb_[std::size_t(dw_.unit_of[std::size_t(i)])] += res_(i);
    }

    // (gamma_a, beta_a) for every covariate, then the conjugate u draw
    void gibbs_update(SamplerState& st, RngStream& rng) {
        const double q = st.q, s = st.s;
        for (int b = 0; b < dw_.m; ++b) w_[std::size_t(b)] = q / (s + q * dw_.nb[std::size_t(b)]);
        for (int a = 0; a < dw_.p; ++a) {
            const double pi = pi_[a], tau = tau_[a];
            double sxw = 0.0, num_corr = 0.0;
            for (int b = 0; b < dw_.m; ++b) {
                const double sx = dw_.SX(b, a);
                sxw += w_[std::size_t(b)] * sx * sx;
                num_corr += w_[std::size_t(b)] * sx * tb_[std::size_t(b)];
            }
            const double den = (dw_.xsq[std::size_t(a)] - sxw) / s;  // x'S^-1 x
            const double xr = dw_.X.col(a).dot(res_);
            const double num = (xr - num_corr) / s + den * st.beta(a);
            const double bhat = num / den, V = 1.0 / den;
            double p_incl;
            if (pi >= 1.0)
                p_incl = 1.0;
            else if (pi <= 0.0)
                p_incl = 0.0;
            else {
                const double lam = std::log(pi) - std::log1p(-pi) +
                                   0.5 * std::log(V / (V + tau)) +
                                   bhat * bhat * tau / (2.0 * V * (V + tau));
                p_incl = lam > 35.0 ? 1.0 : (lam < -35.0 ? 0.0 : 1.0 / (1.0 + std::exp(-lam)));
            }
            const double uu = rng.uniform();
            const std::uint8_t g = uu < p_incl ? 1 : 0;
            double beta_new = 0.0;
            if (g) {
                const double mean = bhat * tau / (tau + V);
                const double var = tau * V / (tau + V);
                beta_new = mean + std::sqrt(var) * rng.normal();
            }
            const double delta = beta_new - st.beta(a);
            if (delta != 0.0) {
                res_.noalias() -= dw_.X.col(a) * delta;
                for (int b = 0; b < dw_.m; ++b) tb_[std::size_t(b)] -= dw_.SX(b, a) * delta;
            }
            st.beta(a) = beta_new;
            st.gamma[std::size_t(a)] = g;
        }
        for (int b = 0; b < dw_.m; ++b) {
            const double prec = dw_.nb[std::size_t(b)] / s + 1.0 / q;
            const double mean = tb_[std::size_t(b)] / (s * prec);
            st.u(b) = mean + rng.normal() / std::sqrt(prec);
        }
    }

    // joint log-scale random walk on (q, s); adapt steps the proposal scale
    // toward the target acceptance rate (burn-in only, caller's choice)
    void mh_update(SamplerState& st, RngStream& rng, bool adapt, double adapt_step,
                   double adapt_target) {
        const double rss = res_.squaredNorm();
        auto log_target = [&](double lq, double ls) {
            // evaluation floor keeps exp underflow out of the likelihood; the
            // chain state itself is never floored
            const double q = std::max(std::exp(lq), 1e-12);
            const double s = std::max(std::exp(ls), 1e-12);
            double ll;
            if (dw_.m > 0) {
                double corr = 0.0, ld = 0.0;
                for (int b = 0; b < dw_.m; ++b) {
                    const double denom = s + q * dw_.nb[std::size_t(b)];
                    corr += (q / denom) * tb_[std::size_t(b)] * tb_[std::size_t(b)];
                    ld += std::log(denom);
                }
                ld += double(dw_.N - dw_.m) * std::log(s);
                ll = -0.5 * (ld + (rss - corr) / s);
            } else {
                ll = -0.5 * (double(dw_.N) * std::log(s) + rss / s);
            }
            // IG(shape, scale) prior plus the log-scale Jacobian: the terms in
            // log v reduce to -shape * log v
            const double lp = -shape_ * lq - qscale_ / q - shape_ * ls - sscale_ / s;
            return ll + lp;
        };
        const double sd = std::exp(st.log_prop_sd);
        const double lq = std::log(st.q), ls = std::log(st.s);
        const double lq_prop = lq + sd * rng.normal();
        const double ls_prop = ls + sd * rng.normal();
        const double log_acc = log_target(lq_prop, ls_prop) - log_target(lq, ls);
        const double uu = rng.uniform();
        const bool accept = std::log(uu) < log_acc;
        if (accept) {
            st.q = std::exp(lq_prop);
            st.s = std::exp(ls_prop);
        }
        st.mh_steps += 1;
        st.mh_accepts += accept ? 1 : 0;
        if (adapt) st.log_prop_sd += adapt_step * ((accept ? 1.0 : 0.0) - adapt_target);
    }

    void sweep(SamplerState& st, RngStream& rng, bool fix_variances, bool adapt, double adapt_step,
               double adapt_target) {
        gibbs_update(st, rng);
        if (!fix_variances) mh_update(st, rng, adapt, adapt_step, adapt_target);
    }

  private:
    const DesignWork& dw_;
    const double* d_;
    const double* pi_;
    const double* tau_;
    double qscale_, sscale_, shape_;
    Eigen::VectorXd res_;
    std::vector<double> tb_;
    std::vector<double> w_;
};

// Retained draws for every column. Storage is column-chunked to match the
// draws file: column j occupies n_draws consecutive records of (p+2) doubles,
// [beta_1..beta_p, q, s].
struct PosteriorDraws {
    std::size_t n_draws = 0;
    int p = 0;
    std::vector<std::int64_t> positions;
    std::vector<double> data;
    std::vector<double> acceptance;  // per column MH acceptance rate

    std::size_t record() const { return std::size_t(p) + 2; }
    std::size_t offset(std::size_t col, std::size_t draw) const {
        return (col * n_draws + draw) * record();
    }
    double beta(std::size_t draw, std::size_t col, int a) const {
        return data[offset(col, draw) + std::size_t(a)];
    }
    double qvar(std::size_t draw, std::size_t col) const {
        return data[offset(col, draw) + std::size_t(p)];
    }
    double svar(std::size_t draw, std::size_t col) const {
        return data[offset(col, draw) + std::size_t(p) + 1];
    }
};

// Full run over all retained columns. Column streams are keyed by the
// coefficient position, so any worker count or processing order yields the
// same draws.
inline PosteriorDraws run_sampler(const RetainedMatrix& rm, const DesignWork& dw,
                                  const Hyperparams& hyper, const std::vector<ColumnInit>& inits,
                                  const std::vector<std::pair<int, int>>& bands,
                                  const SamplerConfig& cfg) {
    cfg.validate();
    if (rm.positions.size() != inits.size() || rm.positions.size() != bands.size())
        throw data_error("retained matrix, inits and bands disagree in length");
    if (rm.n_images != std::size_t(dw.N)) throw data_error("design rows do not match image count");
    PosteriorDraws out;
    out.n_draws = cfg.n_draws();
    out.p = dw.p;
    out.positions = rm.positions;
    out.data.resize(out.n_draws * out.record() * rm.positions.size());
    out.acceptance.assign(rm.positions.size(), 0.0);
    unsigned workers = cfg.workers ? cfg.workers : worker_count();
    parallel_for(rm.positions.size(), workers, [&](std::size_t j) {
        std::vector<double> pi(std::size_t(dw.p)), tau(std::size_t(dw.p));
        for (int a = 0; a < dw.p; ++a) {
            const BandHyper& bh = hyper.lookup(a, bands[j]);
            pi[std::size_t(a)] = bh.pi;
            tau[std::size_t(a)] = bh.tau;
        }
        ColumnSampler cs(dw, rm.column(j), pi.data(), tau.data(), inits[j].q0, inits[j].s0,
                         hyper.ig_shape);
        SamplerState st = cs.initial_state(inits[j]);
        st.log_prop_sd = std::log(std::max(cfg.proposal_sd, 1e-8));
        RngStream rng = column_stream(cfg.seed, std::uint64_t(rm.positions[j]));
        cs.sync(st);
        for (int t = 1; t <= cfg.burn_in; ++t) {
            const double step = cfg.adapt_proposal ? std::pow(double(t), -0.6) : 0.0;
            cs.sweep(st, rng, cfg.fix_variances, cfg.adapt_proposal, step, cfg.adapt_target);
        }
        st.mh_steps = 0;
        st.mh_accepts = 0;
        for (int t = 1; t <= cfg.iterations; ++t) {
            cs.sweep(st, rng, cfg.fix_variances, false, 0.0, cfg.adapt_target);
            if (t % cfg.thin == 0) {
                const std::size_t draw = std::size_t(t / cfg.thin) - 1;
                double* rec = out.data.data() + out.offset(j, draw);
                for (int a = 0; a < dw.p; ++a) rec[std::size_t(a)] = st.beta(a);
                rec[std::size_t(dw.p)] = st.q;
                rec[std::size_t(dw.p) + 1] = st.s;
            }
        }
        out.acceptance[j] = st.mh_steps ? double(st.mh_accepts) / double(st.mh_steps) : 0.0;
    });
    return out;
}

}  // namespace isofmm
