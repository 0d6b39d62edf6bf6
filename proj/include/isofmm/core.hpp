#pragma once
// Core value types and numeric helpers shared across the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace isofmm {

// Error taxonomy. The CLI maps these to exit codes: config 2, data 3, numeric 4.
struct config_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct data_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct numeric_error : std::runtime_error { using std::runtime_error::runtime_error; };

// Compensated summation, Neumaier's variant: the correction survives even
// when a term exceeds the running sum, so mixed-sign cancellation stays at
// machine epsilon independent of n.
inline double kahan_sum(const double* x, std::size_t n) {
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = s + x[i];
        if (std::abs(s) >= std::abs(x[i]))
            c += (s - t) + x[i];
        else
            c += (x[i] - t) + s;
        s = t;
    }
    return s + c;
}

inline double kahan_sum(const std::vector<double>& x) { return kahan_sum(x.data(), x.size()); }

inline double sum_sq(const double* x, std::size_t n) {
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double y = x[i] * x[i] - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    return s;
}

inline double sum_sq(const std::vector<double>& x) { return sum_sq(x.data(), x.size()); }

// Regular pixel grid, column-major so that flattening is the identity on storage:
// element (t1, t2), zero-based, lives at t1 + t2*rows. This matches the
// column-stacking convention used everywhere downstream.
struct ImageGrid {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    ImageGrid() = default;
    ImageGrid(int r, int c, double fill = 0.0) : rows(r), cols(c), v(std::size_t(r) * c, fill) {
        if (r < 0 || c < 0) throw data_error("image dims must be nonnegative");
    }
    ImageGrid(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != std::size_t(r) * c) throw data_error("pixel count does not match dims");
    }

    std::size_t size() const { return v.size(); }
    double& at(int r, int c) { return v[std::size_t(r) + std::size_t(c) * rows]; }
    double at(int r, int c) const { return v[std::size_t(r) + std::size_t(c) * rows]; }
    bool same_dims(const ImageGrid& o) const { return rows == o.rows && cols == o.cols; }
};

// Flattened image; dims are retained so the flattening stays invertible.
struct VecImage {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;
};

inline VecImage vectorize(const ImageGrid& g) {
    return VecImage{g.rows, g.cols, g.v};
}

inline ImageGrid unvectorize(const VecImage& f) {
    if (f.v.size() != std::size_t(f.rows) * f.cols)
        throw data_error("vectorized image length does not match dims");
    ImageGrid g(f.rows, f.cols);
    g.v = f.v;
    return g;
}

// A set of same-sized images plus their identity and grouping labels.
struct Dataset {
    std::vector<ImageGrid> images;
    std::vector<std::string> image_ids;
    std::vector<std::string> group_labels;
    std::vector<std::string> unit_ids;

    std::size_t size() const { return images.size(); }

    void validate() const {
        if (images.empty()) throw data_error("dataset contains no images");
        if (image_ids.size() != images.size() || group_labels.size() != images.size() ||
            unit_ids.size() != images.size())
            throw data_error("dataset label arrays out of step with images");
        for (std::size_t i = 1; i < images.size(); ++i)
            if (!images[i].same_dims(images[0]))
                throw data_error("dataset images do not share dimensions (image '" +
                                 image_ids[i] + "')");
    }
};

}  // namespace isofmm
