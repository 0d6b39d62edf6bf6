#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "isofmm/io.hpp"
#include "isofmm/rng.hpp"

using namespace isofmm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("isofmm_io_" + std::to_string(::getpid()) + "_" +
                std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    fs::path operator/(const std::string& name) const { return path / name; }
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("csv matrices round trip exactly") {
    TempDir tmp;
    RngStream rng(501);
    ImageGrid img(9, 7);
    for (double& x : img.v) x = rng.normal() * std::pow(10.0, -100.0 + 200.0 * rng.uniform());
    img.v[0] = 0.0;
    img.v[1] = -1.0 / 3.0;
    img.v[2] = 5e-324;  // smallest subnormal
    write_csv_matrix(tmp / "m.csv", img);
    ImageGrid back = read_csv_matrix(tmp / "m.csv");
    REQUIRE(back.rows == img.rows);
    REQUIRE(back.cols == img.cols);
    CHECK(back.v == img.v);  // bitwise, thanks to %.17g
}

TEST_CASE("csv reader reports the offending line") {
    TempDir tmp;
    write_text(tmp / "ragged.csv", "1,2,3\n4,5\n");
    CHECK_THROWS_WITH(read_csv_matrix(tmp / "ragged.csv"),
                      Catch::Matchers::ContainsSubstring("line 2") &&
                          Catch::Matchers::ContainsSubstring("ragged"));
    write_text(tmp / "alpha.csv", "1,2\n3,x\n");
    CHECK_THROWS_WITH(read_csv_matrix(tmp / "alpha.csv"),
                      Catch::Matchers::ContainsSubstring("not a number"));
    write_text(tmp / "empty.csv", "");
    CHECK_THROWS_AS(read_csv_matrix(tmp / "empty.csv"), data_error);
}

TEST_CASE("binary pgm round trips at both depths") {
    TempDir tmp;
    ImageGrid img(3, 4);
    for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = double(i * 5000 % 65536);
    write_pgm(tmp / "deep.pgm", img, 0.0, 65535.0, 65535);
    ImageGrid deep = read_pgm(tmp / "deep.pgm");
    REQUIRE(deep.rows == 3);
    REQUIRE(deep.cols == 4);
    CHECK(deep.v == img.v);

    ImageGrid small(2, 2);
    small.v = {0, 255, 128, 64};
    write_pgm(tmp / "flat.pgm", small, 0.0, 255.0, 255);
    CHECK(read_pgm(tmp / "flat.pgm").v == small.v);

    // out-of-range intensities clamp instead of wrapping
    ImageGrid wild(1, 2);
    wild.v = {-10.0, 300.0};
    write_pgm(tmp / "clamp.pgm", wild, 0.0, 255.0, 255);
    ImageGrid clamped = read_pgm(tmp / "clamp.pgm");
    CHECK(clamped.v == std::vector<double>{0.0, 255.0});
}

TEST_CASE("plain text pgm with comments parses") {
    TempDir tmp;
    write_text(tmp / "plain.pgm",
               "P2\n# a comment\n3 2\n# another\n255\n0 10 20\n30 40 50\n");
    ImageGrid img = read_pgm(tmp / "plain.pgm");
    REQUIRE(img.rows == 2);
    REQUIRE(img.cols == 3);
    CHECK(img.at(0, 0) == 0.0);
    CHECK(img.at(0, 2) == 20.0);
    CHECK(img.at(1, 1) == 40.0);

    write_text(tmp / "over.pgm", "P2\n1 1\n255\n300\n");
    CHECK_THROWS_WITH(read_pgm(tmp / "over.pgm"),
                      Catch::Matchers::ContainsSubstring("exceeds maxval"));
    write_text(tmp / "bad.pgm", "P7\n1 1\n255\n0\n");
    CHECK_THROWS_AS(read_pgm(tmp / "bad.pgm"), data_error);
    write_text(tmp / "short.pgm", "P5\n4 4\n255\nab");
    CHECK_THROWS_WITH(read_pgm(tmp / "short.pgm"),
                      Catch::Matchers::ContainsSubstring("truncated"));
    CHECK_THROWS_AS(read_image_file(tmp / "plain.tif"), data_error);
}

TEST_CASE("manifest loading resolves relative paths and validates fields") {
    TempDir tmp;
    ImageGrid a(4, 4, 1.0), b(4, 4, 2.0);
    a.v[3] = 7.0;
    write_csv_matrix(tmp / "a.csv", a);
    fs::create_directories(tmp.path / "sub");
    write_csv_matrix(tmp.path / "sub" / "b.csv", b);
    write_text(tmp / "manifest.csv",
               "path,image_id,group_label,unit_id\n"
               "# gels follow\r\n"
               "a.csv,gel_a,ctrl,u1\r\n"
               "sub/b.csv,gel_b,treat,u2\n");
    Dataset ds = load_manifest(tmp / "manifest.csv");
    REQUIRE(ds.images.size() == 2);
    CHECK(ds.image_ids == std::vector<std::string>{"gel_a", "gel_b"});
    CHECK(ds.group_labels == std::vector<std::string>{"ctrl", "treat"});
    CHECK(ds.unit_ids == std::vector<std::string>{"u1", "u2"});
    CHECK(ds.images[0].v == a.v);
    CHECK(ds.images[1].v == b.v);
}

TEST_CASE("manifest errors point at the broken line") {
    TempDir tmp;
    write_csv_matrix(tmp / "a.csv", ImageGrid(2, 2, 1.0));

    write_text(tmp / "fields.csv", "a.csv,gel_a,ctrl\n");
    CHECK_THROWS_WITH(load_manifest(tmp / "fields.csv"),
                      Catch::Matchers::ContainsSubstring("line 1") &&
                          Catch::Matchers::ContainsSubstring("expected 4 fields"));

    write_text(tmp / "empty_field.csv", "a.csv,gel_a,,u1\n");
    CHECK_THROWS_WITH(load_manifest(tmp / "empty_field.csv"),
                      Catch::Matchers::ContainsSubstring("field 3 is empty"));

    write_text(tmp / "dup.csv", "a.csv,gel_a,ctrl,u1\na.csv,gel_a,treat,u2\n");
    CHECK_THROWS_WITH(load_manifest(tmp / "dup.csv"),
                      Catch::Matchers::ContainsSubstring("duplicate image_id 'gel_a'"));

    write_text(tmp / "missing.csv", "nope.csv,gel_a,ctrl,u1\n");
    CHECK_THROWS_WITH(load_manifest(tmp / "missing.csv"),
                      Catch::Matchers::ContainsSubstring("not found"));

    write_text(tmp / "none.csv", "# nothing here\n");
    CHECK_THROWS_WITH(load_manifest(tmp / "none.csv"),
                      Catch::Matchers::ContainsSubstring("no images"));
}

TEST_CASE("preprocessed cache refuses a different configuration") {
    TempDir tmp;
    PreprocCache pc;
    pc.config_hash = 0xDEAD;
    pc.epsilon = 1.25e-7;
    pc.t1 = 3;
    pc.t2 = 2;
    pc.meta.image_ids = {"g1", "g2"};
    pc.meta.group_labels = {"a", "b"};
    pc.meta.unit_ids = {"u1", "u2"};
    RngStream rng(502);
    for (int i = 0; i < 2; ++i) {
        ImageGrid img(3, 2);
        for (double& x : img.v) x = rng.normal();
        pc.images.push_back(img);
    }
    write_preproc_cache(tmp / "prep.bin", pc);
    PreprocCache back = read_preproc_cache(tmp / "prep.bin", 0xDEAD);
    CHECK(back.epsilon == pc.epsilon);
    CHECK(back.meta.image_ids == pc.meta.image_ids);
    CHECK(back.meta.group_labels == pc.meta.group_labels);
    CHECK(back.meta.unit_ids == pc.meta.unit_ids);
    CHECK(back.images[0].v == pc.images[0].v);
    CHECK(back.images[1].v == pc.images[1].v);

    CHECK_THROWS_WITH(read_preproc_cache(tmp / "prep.bin", 0xBEEF),
                      Catch::Matchers::ContainsSubstring("config hash mismatch"));
    write_text(tmp / "junk.bin", "NOTMAGIC????");
    CHECK_THROWS_AS(read_preproc_cache(tmp / "junk.bin", 0xDEAD), data_error);
}

TEST_CASE("coefficient cache rebuilds the index map on load") {
    TempDir tmp;
    RngStream rng(503);
    std::vector<ImageGrid> images;
    for (int i = 0; i < 3; ++i) {
        ImageGrid img(10, 12);
        for (double& x : img.v) x = rng.normal();
        images.push_back(img);
    }
    WaveletSpec spec{2, 2, TransformKind::square};
    CoefCache cc;
    cc.config_hash = 0x1234;
    cc.coefs = transform_images(images, spec, 1);
    cc.meta.image_ids = {"g1", "g2", "g3"};
    cc.meta.group_labels = {"a", "a", "b"};
    cc.meta.unit_ids = {"u1", "u2", "u3"};
    write_coef_cache(tmp / "coef.bin", cc);
    CoefCache back = read_coef_cache(tmp / "coef.bin", 0x1234);
    CHECK(back.coefs.coefs == cc.coefs.coefs);
    CHECK(back.coefs.t1 == 10);
    CHECK(back.coefs.p1 == 12);
    CHECK(back.coefs.index_map.size() == cc.coefs.index_map.size());
    CHECK(back.coefs.index_map[37] == cc.coefs.index_map[37]);
    CHECK(back.meta.unit_ids == cc.meta.unit_ids);
    CHECK_THROWS_WITH(read_coef_cache(tmp / "coef.bin", 0x9999),
                      Catch::Matchers::ContainsSubstring("config hash mismatch"));
}

TEST_CASE("mask files are one based on disk and provenance checked") {
    TempDir tmp;
    CompressionMask mask;
    mask.P = 0.975;
    mask.positions = {0, 5, 17};
    write_mask_file(tmp / "mask.txt", mask, 8, 4, 0xABCD);
    const std::string text = detail::read_file(tmp / "mask.txt");
    CHECK(text.find("\n1\n") != std::string::npos);   // position 0 printed as 1
    CHECK(text.find("\n18\n") != std::string::npos);  // position 17 printed as 18
    MaskFile mf = read_mask_file(tmp / "mask.txt", 0xABCD);
    CHECK(mf.mask.positions == mask.positions);
    CHECK(mf.mask.P == 0.975);
    CHECK(mf.p1 == 8);
    CHECK(mf.p2 == 4);

    CHECK_THROWS_WITH(read_mask_file(tmp / "mask.txt", 0xDCBA),
                      Catch::Matchers::ContainsSubstring("config hash mismatch"));

    // count mismatch between header and body
    std::string corrupt = text;
    corrupt.replace(corrupt.find("t_star 3"), 8, "t_star 2");
    write_text(tmp / "bad.txt", corrupt);
    CHECK_THROWS_WITH(read_mask_file(tmp / "bad.txt", 0xABCD),
                      Catch::Matchers::ContainsSubstring("t_star"));

    // a position beyond p1*p2
    write_text(tmp / "oob.txt",
               "config_hash 000000000000abcd\ndims 2 2\nP 0.9\nt_star 1\n9\n");
    CHECK_THROWS_WITH(read_mask_file(tmp / "oob.txt", 0xABCD),
                      Catch::Matchers::ContainsSubstring("exceeds"));
}

TEST_CASE("draws file round trips through the mapped reader") {
    TempDir tmp;
    RngStream rng(504);
    DrawsHeader h;
    h.config_hash = 11;
    h.mask_hash = 22;
    h.design_hash = 33;
    h.seed = 99;
    h.burn_in = 10;
    h.iterations = 40;
    h.thin = 4;
    h.t1 = 6;
    h.t2 = 5;
    h.p1 = 8;
    h.p2 = 8;
    h.moments = 4;
    h.levels = 3;
    h.kind = 0;
    h.N = 12;
    h.p = 2;
    h.m = 4;
    h.n_draws = 10;
    h.t_star = 3;
    h.covariate_names = {"ctrl", "treat"};
    h.positions = {2, 9, 31};
    h.acceptance = {0.3, 0.4, 0.5};
    std::vector<double> data(h.n_draws * 4 * h.t_star);
    for (double& x : data) x = rng.normal();
    write_draws_file(tmp / "draws.bin", h, data);

    DrawsReader reader(tmp / "draws.bin");
    CHECK(reader.header().config_hash == 11);
    CHECK(reader.header().covariate_names == h.covariate_names);
    CHECK(reader.header().positions == h.positions);
    CHECK(reader.header().acceptance == h.acceptance);
    CHECK(reader.header().n_draws == 10u);

    PosteriorDraws d = reader.load();
    CHECK(d.data == data);
    CHECK(d.p == 2);
    // column chunks are contiguous spans of the payload
    CHECK(reader.column_chunk(1)[0] == data[1 * 10 * 4]);
    CHECK(reader.column_chunk(2)[39] == data[2 * 10 * 4 + 39]);

    TransformGeometry geo = reader.geometry();
    CHECK(geo.t1 == 6);
    CHECK(geo.p2 == 8);
    CHECK(geo.spec.moments == 4);
    CHECK(geo.spec.kind == TransformKind::square);

    // payload length is validated on write
    DrawsHeader shrunk = h;
    shrunk.n_draws = 11;
    CHECK_THROWS_AS(write_draws_file(tmp / "bad.bin", shrunk, data), data_error);
    write_text(tmp / "junk.bin", "IFMMJUNKxxxxxxxxxxxxxxxxxxxxxxxxxxxx");
    CHECK_THROWS_AS(DrawsReader(tmp / "junk.bin"), data_error);
}

TEST_CASE("scratch matrix gathers pixel tiles from draw rows") {
    TempDir tmp;
    const fs::path p = tmp / "scratch.bin";
    {
        ScratchMatrixFile scratch(p, 5);
        std::vector<double> row(5);
        for (int r = 0; r < 7; ++r) {
            for (int c = 0; c < 5; ++c) row[std::size_t(c)] = 10.0 * r + c;
            scratch.append_row(row.data());
        }
        CHECK(scratch.rows() == 7u);
        std::vector<double> tile;
        scratch.read_tile(1, 3, tile);
        REQUIRE(tile.size() == 21u);
        for (int c = 0; c < 3; ++c)
            for (int r = 0; r < 7; ++r)
                CHECK(tile[std::size_t(c) * 7 + std::size_t(r)] == 10.0 * r + (c + 1));
        CHECK(fs::exists(p));
    }
    CHECK_FALSE(fs::exists(p));  // removed on destruction
}

TEST_CASE("report writers emit one based coordinates") {
    TempDir tmp;
    Region reg;
    reg.pixels = {0, 1};
    reg.centroid_r = 0.5;
    reg.centroid_c = 0.0;
    reg.area = 2;
    reg.max_prob = 0.93;
    write_region_csv(tmp / "regions.csv", {reg});
    const std::string text = detail::read_file(tmp / "regions.csv");
    CHECK(text.find("region_id,x,y,area,max_p") == 0);
    CHECK(text.find("1,1.5,1,2,0.93") != std::string::npos);

    Hyperparams hyper;
    hyper.groups[GroupKey{0, 1, 1}] = BandHyper{0.25, 2.0};
    write_hyper_csv(tmp / "hyper.csv", hyper, {"ctrl"});
    const std::string ht = detail::read_file(tmp / "hyper.csv");
    CHECK(ht.find("covariate,scale,orient,pi,tau") == 0);
    CHECK(ht.find("ctrl,1,1,0.25,2") != std::string::npos);

    write_compression_table(tmp / "table.csv", {{0.5, 10, 3.2}});
    CHECK(detail::read_file(tmp / "table.csv").find("0.5,10,3.2") != std::string::npos);
}

TEST_CASE("hashes separate different inputs") {
    CHECK(hash_hex(0xABCDULL).size() == 16u);
    CHECK(hash_hex(0xABCDULL) == "000000000000abcd");

    DesignSpec a = build_design({"g1", "g1", "g2", "g2"}, {"u1", "u2", "u3", "u4"});
    DesignSpec b = build_design({"g1", "g2", "g1", "g2"}, {"u1", "u2", "u3", "u4"});
    CHECK(design_hash(a) != design_hash(b));
    CHECK(design_hash(a) == design_hash(a));

    CompressionMask m1;
    m1.P = 0.9;
    m1.positions = {1, 2};
    CompressionMask m2 = m1;
    m2.positions = {1, 3};
    CHECK(mask_hash(m1, 4, 4) != mask_hash(m2, 4, 4));
    CHECK(mask_hash(m1, 4, 4) != mask_hash(m1, 4, 8));
    CHECK(mask_hash(m1, 4, 4) == mask_hash(m1, 4, 4));
}
