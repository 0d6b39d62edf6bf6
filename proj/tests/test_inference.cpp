#include <catch2/catch_amalgamated.hpp>

#include <deque>
#include <set>

#include "isofmm/inference.hpp"
#include "isofmm/rng.hpp"

using namespace isofmm;

namespace {

// ascending-sort restatement of the threshold rule in long double arithmetic
FdrResult fdr_oracle(std::vector<double> p, double alpha) {
    std::sort(p.begin(), p.end());
    FdrResult out;
    long double run = 0.0L;
    const std::size_t T = p.size();
    for (std::size_t j = 1; j <= T; ++j) {
        run += 1.0L - (long double)p[T - j];
        if (run <= (long double)alpha * (long double)j) {
            out.has_phi = true;
            out.xi = j;
            out.phi = p[T - j];
        }
    }
    return out;
}

// row-major BFS flood fill, independent of the implementation's DFS scan
std::vector<std::set<std::int64_t>> components_oracle(const ImageGrid& prob, double phi) {
    const int R = prob.rows, C = prob.cols;
    std::vector<std::uint8_t> seen(prob.v.size(), 0);
    std::vector<std::set<std::int64_t>> comps;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            const std::size_t t = std::size_t(r) + std::size_t(c) * R;
            if (prob.v[t] < phi || seen[t]) continue;
            std::set<std::int64_t> comp;
            std::deque<std::pair<int, int>> queue = {{r, c}};
            seen[t] = 1;
            while (!queue.empty()) {
                auto [cr, cc] = queue.front();
                queue.pop_front();
                comp.insert(std::int64_t(cr) + std::int64_t(cc) * R);
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (!dr && !dc) continue;
                        const int nr = cr + dr, nc = cc + dc;
                        if (nr < 0 || nr >= R || nc < 0 || nc >= C) continue;
                        const std::size_t nt = std::size_t(nr) + std::size_t(nc) * R;
                        if (prob.v[nt] >= phi && !seen[nt]) {
                            seen[nt] = 1;
                            queue.push_back({nr, nc});
                        }
                    }
            }
            comps.push_back(std::move(comp));
        }
    return comps;
}

// fabricated draw store: one record per (column, draw), [beta..., q, s]
PosteriorDraws make_draws(std::size_t n_draws, int p, std::vector<std::int64_t> positions) {
    PosteriorDraws d;
    d.n_draws = n_draws;
    d.p = p;
    d.positions = std::move(positions);
    d.data.assign(d.n_draws * d.record() * d.positions.size(), 0.0);
    d.acceptance.assign(d.positions.size(), 0.0);
    return d;
}

void set_record(PosteriorDraws& d, std::size_t col, std::size_t draw,
                const std::vector<double>& beta, double q, double s) {
    double* rec = d.data.data() + d.offset(col, draw);
    for (int a = 0; a < d.p; ++a) rec[std::size_t(a)] = beta[std::size_t(a)];
    rec[std::size_t(d.p)] = q;
    rec[std::size_t(d.p) + 1] = s;
}

}  // namespace

TEST_CASE("threshold worked example") {
    FdrResult r = fdr_threshold(std::vector<double>{0.99, 0.95, 0.90, 0.50}, 0.10);
    CHECK(r.has_phi);
    CHECK(r.xi == 3);
    CHECK(r.phi == 0.90);
}

TEST_CASE("threshold boundary cases") {
    // certainty everywhere: every prefix is admissible
    FdrResult all = fdr_threshold(std::vector<double>(25, 1.0), 0.05);
    CHECK(all.has_phi);
    CHECK(all.xi == 25);
    CHECK(all.phi == 1.0);

    // nothing convincing: no admissible prefix
    FdrResult none = fdr_threshold(std::vector<double>(10, 0.5), 0.10);
    CHECK_FALSE(none.has_phi);
    CHECK(none.xi == 0);

    FdrResult empty = fdr_threshold(std::vector<double>{}, 0.10);
    CHECK_FALSE(empty.has_phi);

    CHECK_THROWS_AS(fdr_threshold(std::vector<double>{0.5}, 0.0), config_error);
    CHECK_THROWS_AS(fdr_threshold(std::vector<double>{0.5}, 1.0), config_error);
    CHECK_THROWS_AS(fdr_threshold(std::vector<double>{1.5}, 0.1), data_error);
    CHECK_THROWS_AS(fdr_threshold(std::vector<double>{-0.1}, 0.1), data_error);
}

TEST_CASE("threshold agrees with an ascending sort oracle") {
    RngStream rng(401);
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t n = 1 + std::size_t(rng.uniform() * 200);
        std::vector<double> p(n);
        for (double& x : p) {
            const double u = rng.uniform();
            x = u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : rng.uniform());
        }
        for (double alpha : {0.05, 0.10, 0.25}) {
            FdrResult got = fdr_threshold(p, alpha);
            FdrResult want = fdr_oracle(p, alpha);
            INFO("rep " << rep << " n " << n << " alpha " << alpha);
            REQUIRE(got.has_phi == want.has_phi);
            CHECK(got.xi == want.xi);
            if (got.has_phi) CHECK(got.phi == want.phi);
        }
    }
}

TEST_CASE("the maximal prefix meets the error budget and longer ones do not") {
    RngStream rng(402);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> p(150);
        for (double& x : p) x = rng.uniform();
        const double alpha = 0.15;
        FdrResult r = fdr_threshold(p, alpha);
        std::sort(p.begin(), p.end(), std::greater<double>());
        long double run = 0.0L;
        for (std::size_t j = 0; j < p.size(); ++j) {
            run += 1.0L - (long double)p[j];
            const bool admissible = run <= (long double)alpha * (long double)(j + 1);
            if (j + 1 == r.xi) CHECK(admissible);
            if (j + 1 > r.xi) CHECK_FALSE(admissible);
        }
        // continuous values are almost surely distinct, so the flagged set
        // {p >= phi} is exactly the admissible prefix
        if (r.has_phi) {
            std::size_t flagged = 0;
            for (double x : p) flagged += (x >= r.phi) ? 1 : 0;
            CHECK(flagged == r.xi);
        }
    }
}

TEST_CASE("ties at the threshold can push the flagged set past the prefix") {
    // the admissible prefix stops inside a tie block; inclusive flagging takes
    // the whole block, so the flagged set here is larger than xi
    std::vector<double> p = {1.0, 0.82, 0.82};
    FdrResult r = fdr_threshold(p, 0.10);
    REQUIRE(r.has_phi);
    CHECK(r.xi == 2);
    CHECK(r.phi == 0.82);
    ImageGrid img{1, 3, p};
    DiscoveryMap map = flag_regions(img, r.phi, 0.0, 0.10);
    std::size_t flagged = 0;
    for (auto f : map.flagged) flagged += f;
    CHECK(flagged == 3);
}

TEST_CASE("discovery probability counts strict exceedances") {
    EffectDraws eff;
    eff.n_draws = 3;
    eff.rows = 1;
    eff.cols = 1;
    eff.data = {0.7, 0.4, -0.9};
    ImageGrid prob = prob_discovery(eff, 0.585);
    CHECK(prob.v[0] == Catch::Approx(2.0 / 3.0));

    EffectDraws edge;
    edge.n_draws = 1;
    edge.rows = 1;
    edge.cols = 1;
    edge.data = {0.5};
    CHECK(prob_discovery(edge, 0.5).v[0] == 0.0);  // equality does not count
    CHECK(prob_discovery(edge, 0.49).v[0] == 1.0);
    CHECK_THROWS_AS(prob_discovery(edge, -1.0), config_error);
}

TEST_CASE("discovery probability is nonincreasing in the effect size") {
    RngStream rng(403);
    EffectDraws eff;
    eff.n_draws = 40;
    eff.rows = 5;
    eff.cols = 4;
    eff.data.resize(eff.n_draws * eff.npix());
    for (double& x : eff.data) x = rng.normal();
    ImageGrid prev = prob_discovery(eff, 0.0);
    for (double delta : {0.2, 0.5, 1.0, 2.0}) {
        ImageGrid cur = prob_discovery(eff, delta);
        for (std::size_t t = 0; t < cur.v.size(); ++t) CHECK(cur.v[t] <= prev.v[t]);
        prev = cur;
    }
}

TEST_CASE("full coefficient reconstruction inverts the transform") {
    RngStream rng(404);
    WaveletSpec spec{2, 2, TransformKind::square};
    ImageGrid img(8, 8);
    for (double& x : img.v) x = rng.normal();
    CoefGrid cg = dwt2d(img, spec);

    std::vector<std::int64_t> all(cg.coefs.size());
    for (std::size_t t = 0; t < all.size(); ++t) all[t] = std::int64_t(t);
    PosteriorDraws d = make_draws(2, 1, all);
    for (std::size_t j = 0; j < all.size(); ++j) {
        set_record(d, j, 0, {cg.coefs[j]}, 1.0, 1.0);
        set_record(d, j, 1, {2.0 * cg.coefs[j]}, 1.0, 1.0);
    }
    TransformGeometry geo{8, 8, 8, 8, spec};
    EffectDraws eff = reconstruct_effect_draws(d, {1.0}, geo);
    REQUIRE(eff.n_draws == 2);
    for (std::size_t t = 0; t < img.v.size(); ++t) {
        CHECK(eff.draw(0)[t] == Catch::Approx(img.v[t]).margin(1e-10));
        CHECK(eff.draw(1)[t] == Catch::Approx(2.0 * img.v[t]).margin(1e-10));
    }
}

TEST_CASE("contrast reconstruction is linear in the weights") {
    RngStream rng(405);
    WaveletSpec spec{1, 1, TransformKind::square};
    TransformGeometry geo{2, 2, 2, 2, spec};
    PosteriorDraws d = make_draws(3, 2, {0, 2, 3});
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t t = 0; t < 3; ++t)
            set_record(d, j, t, {rng.normal(), rng.normal()}, 0.5, 0.5);
    EffectDraws a = reconstruct_effect_draws(d, {1.0, 0.0}, geo);
    EffectDraws b = reconstruct_effect_draws(d, {0.0, 1.0}, geo);
    EffectDraws ab = reconstruct_effect_draws(d, {2.0, -3.0}, geo);
    for (std::size_t t = 0; t < ab.data.size(); ++t)
        CHECK(ab.data[t] == Catch::Approx(2.0 * a.data[t] - 3.0 * b.data[t]).margin(1e-9));
}

TEST_CASE("streaming delivers draws in order for any worker count") {
    RngStream rng(406);
    WaveletSpec spec{2, 1, TransformKind::rectangular};
    TransformGeometry geo{4, 4, 4, 4, spec};
    PosteriorDraws d = make_draws(37, 1, {0, 1, 5, 9, 15});
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t t = 0; t < 37; ++t) set_record(d, j, t, {rng.normal()}, 1.0, 1.0);

    auto collect = [&](unsigned workers, std::size_t block) {
        std::vector<double> flat;
        std::vector<std::size_t> order;
        stream_effect_draws(
            d, {1.0}, geo,
            [&](std::size_t k, const double* img) {
                order.push_back(k);
                flat.insert(flat.end(), img, img + geo.npix());
            },
            workers, block);
        for (std::size_t k = 0; k < order.size(); ++k) REQUIRE(order[k] == k);
        return flat;
    };
    std::vector<double> w1 = collect(1, 16);
    CHECK(collect(4, 16) == w1);
    CHECK(collect(3, 5) == w1);
    CHECK(collect(2, 1) == w1);

    CHECK_THROWS_AS(reconstruct_effect_draws(d, {1.0, 2.0}, geo), data_error);
    PosteriorDraws bad = make_draws(2, 1, {16});
    CHECK_THROWS_AS(reconstruct_effect_draws(bad, {1.0}, geo), data_error);
}

TEST_CASE("posterior mean and quantiles") {
    EffectDraws eff;
    eff.n_draws = 4;
    eff.rows = 1;
    eff.cols = 2;
    eff.data = {1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0};
    ImageGrid mu = posterior_mean(eff);
    CHECK(mu.v[0] == Catch::Approx(2.5));
    CHECK(mu.v[1] == Catch::Approx(25.0));

    std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 1.0) == 4.0);
    CHECK(quantile_sorted(v, 0.5) == Catch::Approx(2.5));
    CHECK(quantile_sorted(v, 0.25) == Catch::Approx(1.75));
    CHECK_THROWS_AS(quantile_sorted({}, 0.5), data_error);
    CHECK_THROWS_AS(quantile_sorted(v, 1.2), config_error);
}

TEST_CASE("flagged components match a breadth first oracle") {
    RngStream rng(407);
    for (int rep = 0; rep < 8; ++rep) {
        const int R = 4 + int(rng.uniform() * 60);
        const int C = 4 + int(rng.uniform() * 60);
        ImageGrid prob(R, C);
        for (double& x : prob.v) x = rng.uniform();
        const double phi = 0.7;
        DiscoveryMap map = flag_regions(prob, phi, 0.5, 0.1);
        auto want = components_oracle(prob, phi);

        REQUIRE(map.regions.size() == want.size());
        std::set<std::set<std::int64_t>> got_sets, want_sets;
        std::size_t got_total = 0;
        for (const auto& reg : map.regions) {
            got_sets.insert(std::set<std::int64_t>(reg.pixels.begin(), reg.pixels.end()));
            got_total += reg.pixels.size();
            // per-region summaries recomputed from the pixel list
            double sr = 0.0, sc = 0.0, mx = 0.0;
            int r0 = R, r1 = -1, c0 = C, c1 = -1;
            for (auto t : reg.pixels) {
                const int r = int(t % R), c = int(t / R);
                sr += r;
                sc += c;
                mx = std::max(mx, prob.at(r, c));
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, c);
                c1 = std::max(c1, c);
            }
            CHECK(reg.area == std::int64_t(reg.pixels.size()));
            CHECK(reg.centroid_r == Catch::Approx(sr / double(reg.area)));
            CHECK(reg.centroid_c == Catch::Approx(sc / double(reg.area)));
            CHECK(reg.max_prob == mx);
            CHECK(reg.r0 == r0);
            CHECK(reg.r1 == r1);
            CHECK(reg.c0 == c0);
            CHECK(reg.c1 == c1);
        }
        for (auto& s : want) {
            want_sets.insert(s);
        }
        CHECK(got_sets == want_sets);
        std::size_t flagged = 0;
        for (auto f : map.flagged) flagged += f;
        CHECK(flagged == got_total);
        // ordering contract: max probability descending
        for (std::size_t k = 1; k < map.regions.size(); ++k)
            CHECK(map.regions[k - 1].max_prob >= map.regions[k].max_prob);
    }
}

TEST_CASE("separated blobs become separate regions, corner contact merges") {
    ImageGrid prob(12, 12, 0.0);
    for (int r = 2; r < 5; ++r)
        for (int c = 2; c < 5; ++c) prob.at(r, c) = 0.9;
    for (int r = 8; r < 11; ++r)
        for (int c = 8; c < 11; ++c) prob.at(r, c) = 0.95;
    DiscoveryMap two = flag_regions(prob, 0.8, 0.5, 0.1);
    REQUIRE(two.regions.size() == 2);
    CHECK(two.regions[0].max_prob == 0.95);  // ranked first
    CHECK(two.regions[0].centroid_r == Catch::Approx(9.0));
    CHECK(two.regions[0].centroid_c == Catch::Approx(9.0));
    CHECK(two.regions[1].centroid_r == Catch::Approx(3.0));
    CHECK(two.regions[1].area == 9);

    // single flagged pixel
    ImageGrid one(3, 3, 0.0);
    one.at(1, 1) = 0.99;
    DiscoveryMap single = flag_regions(one, 0.9, 0.5, 0.1);
    REQUIRE(single.regions.size() == 1);
    CHECK(single.regions[0].area == 1);
    CHECK(single.regions[0].pixels == std::vector<std::int64_t>{4});

    // blocks touching only at a corner are one 8-connected component
    ImageGrid diag(4, 4, 0.0);
    diag.at(0, 0) = diag.at(1, 1) = diag.at(2, 2) = diag.at(3, 3) = 1.0;
    CHECK(flag_regions(diag, 0.5, 0.5, 0.1).regions.size() == 1);

    // no threshold, nothing flagged
    DiscoveryMap nothing = flag_regions(prob, std::nullopt, 0.5, 0.1);
    CHECK(nothing.regions.empty());
    CHECK_FALSE(nothing.has_phi);
    for (auto f : nothing.flagged) CHECK(f == 0);

    DiscoveryMap full = compute_discovery(prob, 0.5, 0.1);
    CHECK(full.has_phi);
    CHECK(full.xi == 18);  // both blobs survive at alpha 0.1
}

TEST_CASE("virtual image with zeroed variances is the pure contrast surface") {
    RngStream rng(408);
    WaveletSpec spec{2, 2, TransformKind::square};
    TransformGeometry geo{7, 6, 8, 8, spec};
    PosteriorDraws d = make_draws(2, 2, {0, 3, 7, 12, 40});
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t t = 0; t < 2; ++t)
            set_record(d, j, t, {rng.normal(), rng.normal()}, 0.0, 0.0);

    std::vector<double> x_row = {1.0, 0.0};
    RngStream vr = named_stream(7, 1);
    ImageGrid gel = virtual_gel(d, 1, x_row, {1.0}, geo, vr);
    EffectDraws eff = reconstruct_effect_draws(d, x_row, geo);
    REQUIRE(gel.v.size() == eff.npix());
    for (std::size_t t = 0; t < gel.v.size(); ++t)
        CHECK(gel.v[t] == Catch::Approx(eff.draw(1)[t]).margin(1e-12));
}

TEST_CASE("virtual image is reproducible from its stream, not the call site") {
    RngStream rng(409);
    WaveletSpec spec{1, 1, TransformKind::square};
    TransformGeometry geo{2, 2, 2, 2, spec};
    PosteriorDraws d = make_draws(3, 1, {0, 1, 2, 3});
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t t = 0; t < 3; ++t)
            set_record(d, j, t, {rng.normal()}, 0.3 + 0.1 * double(j), 0.2);

    RngStream s1 = named_stream(42, 900);
    RngStream s2 = named_stream(42, 900);
    ImageGrid a = virtual_gel(d, 2, {1.0}, {1.0, 1.0}, geo, s1);
    ImageGrid b = virtual_gel(d, 2, {1.0}, {1.0, 1.0}, geo, s2);
    CHECK(a.v == b.v);
    RngStream s3 = named_stream(42, 901);
    ImageGrid c = virtual_gel(d, 2, {1.0}, {1.0, 1.0}, geo, s3);
    CHECK(a.v != c.v);

    // unit and noise variances actually spread the surface
    RngStream s4 = named_stream(42, 900);
    ImageGrid quiet = virtual_gel(d, 2, {1.0}, {}, geo, s4);  // no unit term
    CHECK(a.v != quiet.v);

    CHECK_THROWS_AS(virtual_gel(d, 9, {1.0}, {1.0}, geo, s1), data_error);
    CHECK_THROWS_AS(virtual_gel(d, 0, {1.0, 2.0}, {1.0}, geo, s1), data_error);
}
