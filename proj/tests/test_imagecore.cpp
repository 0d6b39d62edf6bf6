#include <catch2/catch_amalgamated.hpp>

#include "isofmm/preprocess.hpp"
#include "isofmm/rng.hpp"

using namespace isofmm;

namespace {

ImageGrid random_image(int rows, int cols, RngStream& rng, double lo = 0.0, double hi = 1.0) {
    ImageGrid img(rows, cols);
    for (double& x : img.v) x = lo + (hi - lo) * rng.uniform();
    return img;
}

// direct per-pixel window scan; the separable implementation must match this
ImageGrid window_min_oracle(const ImageGrid& img, int h) {
    ImageGrid out(img.rows, img.cols);
    for (int c = 0; c < img.cols; ++c)
        for (int r = 0; r < img.rows; ++r) {
            double best = img.at(r, c);
            for (int dc = -h; dc <= h; ++dc)
                for (int dr = -h; dr <= h; ++dr) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= img.rows || cc < 0 || cc >= img.cols) continue;
                    best = std::min(best, img.at(rr, cc));
                }
            out.at(r, c) = best;
        }
    return out;
}

}  // namespace

TEST_CASE("compensated sum handles adversarial cancellation") {
    std::vector<double> x = {1e16, 1.0, -1e16};
    CHECK(kahan_sum(x) == 1.0);
    CHECK(kahan_sum(std::vector<double>{}) == 0.0);
}

TEST_CASE("image grid is column major") {
    ImageGrid g(2, 3);
    g.at(0, 0) = 1;
    g.at(1, 0) = 2;
    g.at(0, 1) = 3;
    g.at(1, 1) = 4;
    g.at(0, 2) = 5;
    g.at(1, 2) = 6;
    CHECK(g.v == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("vectorize round trips bit exactly") {
    RngStream rng(11);
    ImageGrid img = random_image(3, 5, rng);
    VecImage f = vectorize(img);
    // element (t1,t2) sits at t1 + t2*T1, the column-stacking order
    CHECK(f.v[std::size_t(2) + std::size_t(4) * 3] == img.at(2, 4));
    ImageGrid back = unvectorize(f);
    CHECK(back.v == img.v);
    CHECK(back.rows == img.rows);

    VecImage bad = f;
    bad.v.pop_back();
    CHECK_THROWS_AS(unvectorize(bad), data_error);
}

TEST_CASE("background correction of a constant image is zero") {
    ImageGrid img(7, 9, 5.0);
    for (int h : {1, 2, 100}) {
        ImageGrid out = background_correct(img, h);
        for (double x : out.v) CHECK(x == 0.0);
    }
}

TEST_CASE("single peak keeps its height over a flat floor") {
    ImageGrid img(5, 5, 2.0);
    img.at(2, 2) = 10.0;
    ImageGrid out = background_correct(img, 2);
    CHECK(out.at(2, 2) == 8.0);
    for (int c = 0; c < 5; ++c)
        for (int r = 0; r < 5; ++r)
            if (r != 2 || c != 2) CHECK(out.at(r, c) == 0.0);
}

TEST_CASE("separable window minimum equals the brute force scan") {
    RngStream rng(21);
    for (int rep = 0; rep < 5; ++rep) {
        const int rows = 3 + int(rng.uniform() * 14);
        const int cols = 3 + int(rng.uniform() * 14);
        ImageGrid img = random_image(rows, cols, rng, 0.0, 100.0);
        for (int h : {1, 2, 5}) {
            const ImageGrid est = background_estimate(img, h);
            const ImageGrid want = window_min_oracle(img, h);
            for (std::size_t i = 0; i < img.v.size(); ++i) CHECK(est.v[i] == want.v[i]);
        }
    }
}

TEST_CASE("background correction is bounded by the input and by zero") {
    RngStream rng(22);
    ImageGrid img = random_image(12, 17, rng, 0.0, 50.0);
    ImageGrid out = background_correct(img, 3);
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        CHECK(out.v[i] >= 0.0);
        CHECK(out.v[i] <= img.v[i]);
    }
    // each pixel that is its own window minimum lands exactly on zero
    const ImageGrid est = background_estimate(img, 3);
    for (std::size_t i = 0; i < img.v.size(); ++i)
        if (est.v[i] == img.v[i]) CHECK(out.v[i] == 0.0);
}

// A second pass can subtract again: a corrected pixel's window need not
// contain a zero. The operation is defined as one subtraction of the window
// minimum, so this is pinned behavior, not an accident.
TEST_CASE("repeated background correction keeps subtracting residual floors") {
    ImageGrid img(1, 5);
    img.v = {0, 5, 10, 5, 0};
    ImageGrid once = background_correct(img, 1);
    CHECK(once.v == std::vector<double>{0, 5, 5, 5, 0});
    ImageGrid twice = background_correct(once, 1);
    CHECK(twice.v == std::vector<double>{0, 5, 0, 5, 0});
}

TEST_CASE("normalization divides by the total") {
    ImageGrid img(2, 2);
    img.v = {1, 1, 1, 1};
    ImageGrid out = normalize_total(img);
    for (double x : out.v) CHECK(x == 0.25);

    RngStream rng(31);
    ImageGrid rnd = random_image(8, 8, rng);
    ImageGrid norm = normalize_total(rnd);
    long double total = 0.0L;
    for (double x : rnd.v) total += x;
    for (std::size_t i = 0; i < rnd.v.size(); ++i)
        CHECK(norm.v[i] == Catch::Approx(double(rnd.v[i] / total)).epsilon(1e-14));
    CHECK(kahan_sum(norm.v) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normalization is scale invariant") {
    RngStream rng(32);
    ImageGrid img = random_image(6, 7, rng);
    ImageGrid scaled = img;
    for (double& x : scaled.v) x *= 37.5;
    ImageGrid a = normalize_total(img), b = normalize_total(scaled);
    for (std::size_t i = 0; i < a.v.size(); ++i)
        CHECK(a.v[i] == Catch::Approx(b.v[i]).epsilon(1e-13));
}

TEST_CASE("zero total intensity is rejected") {
    ImageGrid img(3, 3, 0.0);
    CHECK_THROWS_AS(normalize_total(img), data_error);
    CHECK_THROWS_WITH(normalize_total(img), Catch::Matchers::ContainsSubstring("zero total intensity"));
}

TEST_CASE("log2 stabilization") {
    ImageGrid img(1, 2);
    img.v = {1.0, 0.0};
    ImageGrid a = log2_stabilize(img, 1e-9);
    CHECK(a.v[0] == Catch::Approx(std::log2(1.0 + 1e-9)));
    ImageGrid b = log2_stabilize(img, std::exp2(-20.0));
    CHECK(b.v[1] == -20.0);
    CHECK_THROWS_AS(log2_stabilize(img, 0.0), config_error);
    CHECK_THROWS_AS(log2_stabilize(img, -1.0), config_error);
}

TEST_CASE("smallest positive value drives the default offset") {
    ImageGrid img(2, 2);
    img.v = {0.0, 0.25, 0.5, 0.0};
    auto sp = smallest_positive({img});
    REQUIRE(sp.has_value());
    CHECK(*sp == 0.25);

    ImageGrid zeros(2, 2, 0.0);
    CHECK_FALSE(smallest_positive({zeros}).has_value());

    ImageGrid mixed(2, 2);
    mixed.v = {0.0, 4.0, 2.0, 0.0};
    ImageGrid out = log2_stabilize(mixed, 2.0);
    CHECK(out.v[0] == 1.0);
    CHECK(out.v[1] == Catch::Approx(std::log2(6.0)));
}

TEST_CASE("dataset preprocessing applies the full chain") {
    Dataset ds;
    RngStream rng(41);
    for (int i = 0; i < 3; ++i) {
        ds.images.push_back(random_image(6, 6, rng, 1.0, 10.0));
        ds.image_ids.push_back("img" + std::to_string(i + 1));
        ds.group_labels.push_back(i < 2 ? "a" : "b");
        ds.unit_ids.push_back("u" + std::to_string(i + 1));
    }
    Dataset copy = ds;
    const double eps = preprocess_dataset(copy, 2);
    CHECK(eps > 0.0);
    // chain oracle on image 0
    ImageGrid want = log2_stabilize(normalize_total(background_correct(ds.images[0], 2)), eps);
    CHECK(copy.images[0].v == want.v);

    // a degenerate image is reported with its id
    Dataset bad = ds;
    bad.images[1] = ImageGrid(6, 6, 3.0);  // constant: zero after background removal
    CHECK_THROWS_WITH(preprocess_dataset(bad, 2), Catch::Matchers::ContainsSubstring("img2"));
}

TEST_CASE("dataset validation catches shape problems") {
    Dataset ds;
    CHECK_THROWS_AS(ds.validate(), data_error);  // empty

    ds.images.push_back(ImageGrid(2, 2, 1.0));
    ds.image_ids.push_back("first");
    ds.group_labels.push_back("g");
    ds.unit_ids.push_back("u");
    CHECK_NOTHROW(ds.validate());

    ds.images.push_back(ImageGrid(3, 2, 1.0));
    ds.image_ids.push_back("second");
    ds.group_labels.push_back("g");
    CHECK_THROWS_AS(ds.validate(), data_error);  // label arrays out of step

    ds.unit_ids.push_back("u");
    CHECK_THROWS_AS(ds.validate(), data_error);  // mismatched dims
    CHECK_THROWS_WITH(ds.validate(), Catch::Matchers::ContainsSubstring("second"));

    ds.images[1] = ImageGrid(2, 2, 1.0);
    CHECK_NOTHROW(ds.validate());
}
