#pragma once
// Fixed-effect and unit-incidence design matrices, plus the per-design
// quantities the sampler reuses across columns.

#include <Eigen/Dense>
#include <algorithm>

#include "core.hpp"

namespace isofmm {

struct DesignSpec {
    Eigen::MatrixXd X;  // N x p, full column rank
    Eigen::MatrixXd Z;  // N x m unit incidence; every row has exactly one 1 (m may be 0)
    std::vector<std::string> covariate_names;  // size p
    std::vector<std::string> unit_names;       // size m

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }
    Eigen::Index m() const { return Z.cols(); }

    void validate() const {
        if (X.rows() < X.cols() + 1)
            throw data_error("design needs at least p+1 images (N >= p+1)");
        if (Z.size() > 0 && Z.rows() != X.rows())
            throw data_error("X and Z row counts differ");
        if (covariate_names.size() != std::size_t(X.cols()))
            throw data_error("covariate name count does not match X");
        if (Z.cols() > 0 && unit_names.size() != std::size_t(Z.cols()))
            throw data_error("unit name count does not match Z");
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            int ones = 0;
            for (Eigen::Index b = 0; b < Z.cols(); ++b) {
                const double z = Z(i, b);
                if (z != 0.0 && z != 1.0)
                    throw data_error("Z entries must be 0 or 1");
                ones += (z == 1.0);
            }
            if (Z.cols() > 0 && ones != 1)
                throw data_error("each image must belong to exactly one unit");
        }
        check_rank();
    }

    // Full column rank at 1e-8 relative singular value tolerance; a failure
    // names the columns loading on the null direction.
    void check_rank() const {
        if (X.cols() == 0) throw data_error("design has no covariates");
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv(0) <= 0.0 || sv(sv.size() - 1) < 1e-8 * sv(0)) {
            Eigen::VectorXd null_dir = svd.matrixV().col(sv.size() - 1);
            std::string cols;
            for (Eigen::Index a = 0; a < null_dir.size(); ++a)
                if (std::abs(null_dir(a)) > 1e-6) {
                    if (!cols.empty()) cols += ", ";
                    cols += (std::size_t(a) < covariate_names.size())
                                ? covariate_names[std::size_t(a)]
                                : ("column " + std::to_string(a + 1));
                }
            throw data_error("design matrix is rank deficient; dependent columns: " + cols);
        }
    }
};

// Cell-means coding by default (one indicator per group, no intercept); the
// alternative is an intercept plus indicators for every group after the first.
// Group and unit order is order of first appearance.
inline DesignSpec build_design(const std::vector<std::string>& group_labels,
                               const std::vector<std::string>& unit_ids,
                               bool intercept_treatment = false) {
    const std::size_t N = group_labels.size();
    if (N == 0) throw data_error("no images in design");
    if (unit_ids.size() != N) throw data_error("group and unit label counts differ");
    std::vector<std::string> groups, units;
    std::vector<int> gidx(N), uidx(N);
    for (std::size_t i = 0; i < N; ++i) {
        if (group_labels[i].empty())
            throw data_error("empty group label for image " + std::to_string(i + 1));
        if (unit_ids[i].empty())
            throw data_error("empty unit id for image " + std::to_string(i + 1));
        auto gi = std::find(groups.begin(), groups.end(), group_labels[i]);
        if (gi == groups.end()) { groups.push_back(group_labels[i]); gi = groups.end() - 1; }
        gidx[i] = int(gi - groups.begin());
        auto ui = std::find(units.begin(), units.end(), unit_ids[i]);
        if (ui == units.end()) { units.push_back(unit_ids[i]); ui = units.end() - 1; }
        uidx[i] = int(ui - units.begin());
    }
    DesignSpec ds;
    const std::size_t G = groups.size();
    if (intercept_treatment) {
        ds.X = Eigen::MatrixXd::Zero(Eigen::Index(N), Eigen::Index(G));
        for (std::size_t i = 0; i < N; ++i) {
            ds.X(Eigen::Index(i), 0) = 1.0;
            if (gidx[i] > 0) ds.X(Eigen::Index(i), gidx[i]) = 1.0;
        }
        ds.covariate_names.push_back("intercept");
        for (std::size_t g = 1; g < G; ++g) ds.covariate_names.push_back(groups[g]);
    } else {
        ds.X = Eigen::MatrixXd::Zero(Eigen::Index(N), Eigen::Index(G));
        for (std::size_t i = 0; i < N; ++i) ds.X(Eigen::Index(i), gidx[i]) = 1.0;
        ds.covariate_names = groups;
    }
    ds.Z = Eigen::MatrixXd::Zero(Eigen::Index(N), Eigen::Index(units.size()));
    for (std::size_t i = 0; i < N; ++i) ds.Z(Eigen::Index(i), uidx[i]) = 1.0;
    ds.unit_names = units;
    ds.validate();
    return ds;
}

// Design constants the per-column sampler reuses: unit membership, per-unit
// covariate sums, column norms.
struct DesignWork {
    int N = 0, p = 0, m = 0;
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
    std::vector<int> unit_of;               // size N; -1 when m == 0
    std::vector<std::vector<int>> members;  // per unit
    std::vector<double> nb;                 // per unit image counts
    Eigen::MatrixXd SX;                     // m x p, within-unit sums of X columns
    std::vector<double> xsq;                // per covariate squared column norm

    explicit DesignWork(const DesignSpec& ds) {
        ds.validate();
        N = int(ds.n());
        p = int(ds.p());
        m = int(ds.m());
        X = ds.X;
        Z = ds.Z;
        unit_of.assign(std::size_t(N), -1);
        members.resize(std::size_t(m));
        nb.assign(std::size_t(m), 0.0);
        for (int i = 0; i < N; ++i)
            for (int b = 0; b < m; ++b)
                if (ds.Z(i, b) == 1.0) {
                    unit_of[std::size_t(i)] = b;
                    members[std::size_t(b)].push_back(i);
                    nb[std::size_t(b)] += 1.0;
                }
        SX = Eigen::MatrixXd::Zero(m, p);
        for (int i = 0; i < N; ++i)
            if (unit_of[std::size_t(i)] >= 0)
                SX.row(unit_of[std::size_t(i)]) += ds.X.row(i);
        xsq.resize(std::size_t(p));
        for (int a = 0; a < p; ++a) xsq[std::size_t(a)] = X.col(a).squaredNorm();
    }

    // Marginal covariance sI + q ZZ' as a dense matrix; used by the moment
    // initializer, not the sweep path.
    Eigen::MatrixXd sigma(double q, double s) const {
        Eigen::MatrixXd S = s * Eigen::MatrixXd::Identity(N, N);
        for (int b = 0; b < m; ++b)
            for (int i : members[std::size_t(b)])
                for (int j : members[std::size_t(b)]) S(i, j) += q;
        return S;
    }
};

}  // namespace isofmm
