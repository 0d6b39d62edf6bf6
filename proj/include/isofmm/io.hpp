#pragma once
// File formats: PGM and CSV images, the run manifest, binary stage caches, the
// retained-position mask, the draws file with a memory-mapped reader, and the
// small CSV reports. Every writer lands on a ".partial" path first and renames
// into place, so a crash never leaves a plausible-looking truncated artifact.

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "design.hpp"
#include "fmm.hpp"
#include "inference.hpp"

namespace isofmm {

// ---------------------------------------------------------------------------
// Hashing. FNV-1a over bytes; all provenance hashes in file headers use it.

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline std::uint64_t design_hash(const DesignSpec& ds) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const std::int64_t dims[3] = {ds.n(), ds.p(), ds.m()};
    h = fnv1a(dims, sizeof dims, h);
    h = fnv1a(ds.X.data(), std::size_t(ds.X.size()) * sizeof(double), h);
    h = fnv1a(ds.Z.data(), std::size_t(ds.Z.size()) * sizeof(double), h);
    for (const auto& s : ds.covariate_names) h = fnv1a(s + "\n", h);
    for (const auto& s : ds.unit_names) h = fnv1a(s + "\n", h);
    return h;
}

inline std::uint64_t mask_hash(const CompressionMask& mask, int p1, int p2) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const std::int32_t dims[2] = {p1, p2};
    h = fnv1a(dims, sizeof dims, h);
    h = fnv1a(&mask.P, sizeof mask.P, h);
    h = fnv1a(mask.positions.data(), mask.positions.size() * sizeof(std::int64_t), h);
    return h;
}

// ---------------------------------------------------------------------------
// Atomic file replacement.

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path, const void* data,
                              std::size_t n) {
    const std::filesystem::path tmp = path.string() + ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot open " + tmp.string() + " for writing");
        out.write(static_cast<const char*>(data), std::streamsize(n));
        if (!out) throw data_error("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw data_error("cannot move " + tmp.string() + " into place: " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
}

// Little binary buffer codec for the cache headers. Caches are single-machine
// artifacts, so native byte order is fine.
struct ByteWriter {
    std::string buf;
    void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void i64(std::int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
};

struct ByteReader {
    const char* p;
    const char* end;
    std::string what;

    ByteReader(const void* data, std::size_t n, std::string label)
        : p(static_cast<const char*>(data)), end(p + n), what(std::move(label)) {}
    void need(std::size_t n) const {
        if (std::size_t(end - p) < n) throw data_error(what + ": truncated file");
    }
    void raw(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, p, n);
        p += n;
    }
    std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    std::int32_t i32() { std::int32_t v; raw(&v, 4); return v; }
    std::int64_t i64() { std::int64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }
    std::string str() {
        const std::uint64_t n = u64();
        if (n > std::size_t(end - p)) throw data_error(what + ": truncated string");
        std::string s(p, n);
        p += n;
        return s;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM images. Plain (P2) and raw (P5); maxval over 255 means two bytes per
// sample, high byte first. Files are row-major top to bottom, while ImageGrid
// is column-major, so reads and writes transpose on the fly.

inline void write_pgm(const std::filesystem::path& path, const ImageGrid& img, double lo,
                      double hi, int maxval = 65535) {
    if (maxval != 255 && maxval != 65535) throw config_error("pgm maxval must be 255 or 65535");
    if (!(hi > lo)) hi = lo + 1.0;
    std::string buf;
    buf += "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) + "\n" +
           std::to_string(maxval) + "\n";
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c) {
            double x = (img.at(r, c) - lo) / (hi - lo);
            x = std::min(1.0, std::max(0.0, x));
            const unsigned v = unsigned(std::lround(x * maxval));
            if (maxval > 255) buf += char((v >> 8) & 0xFF);
            buf += char(v & 0xFF);
        }
    detail::write_file_atomic(path, buf);
}

namespace detail {

// tokenizer for plain PGM headers and P2 bodies: whitespace-separated
// integers, '#' comments to end of line
struct PgmTokens {
    const std::string& s;
    std::size_t i = 0;
    std::string what;

    long next() {
        while (i < s.size()) {
            if (s[i] == '#') {
                while (i < s.size() && s[i] != '\n') ++i;
            } else if (std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            } else {
                break;
            }
        }
        if (i >= s.size()) throw data_error(what + ": unexpected end of file");
        if (!std::isdigit(static_cast<unsigned char>(s[i])))
            throw data_error(what + ": malformed header token");
        long v = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            v = v * 10 + (s[i] - '0');
            if (v > (1l << 40)) throw data_error(what + ": numeric overflow");
            ++i;
        }
        return v;
    }
};

}  // namespace detail

inline ImageGrid read_pgm(const std::filesystem::path& path) {
    const std::string s = detail::read_file(path);
    const std::string label = "pgm " + path.string();
    if (s.size() < 2 || s[0] != 'P' || (s[1] != '2' && s[1] != '5'))
        throw data_error(label + ": not a PGM file (want P2 or P5)");
    const bool raw = s[1] == '5';
    detail::PgmTokens tok{s, 2, label};
    const long w = tok.next(), h = tok.next(), maxval = tok.next();
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw data_error(label + ": bad dimensions or maxval");
    ImageGrid img{int(h), int(w), std::vector<double>(std::size_t(w) * std::size_t(h))};
    if (raw) {
        std::size_t i = tok.i;
        if (i >= s.size()) throw data_error(label + ": missing pixel data");
        ++i;  // single whitespace byte after maxval
        const int bytes = maxval > 255 ? 2 : 1;
        if (s.size() - i < std::size_t(w) * std::size_t(h) * std::size_t(bytes))
            throw data_error(label + ": truncated pixel data");
        for (long r = 0; r < h; ++r)
            for (long c = 0; c < w; ++c) {
                unsigned v = static_cast<unsigned char>(s[i++]);
                if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(s[i++]);
                img.at(int(r), int(c)) = double(v);
            }
    } else {
        for (long r = 0; r < h; ++r)
            for (long c = 0; c < w; ++c) {
                const long v = tok.next();
                if (v > maxval) throw data_error(label + ": sample exceeds maxval");
                img.at(int(r), int(c)) = double(v);
            }
    }
    return img;
}

// ---------------------------------------------------------------------------
// CSV matrices: one image row per line, exact %.17g round trip.

inline void write_csv_matrix(const std::filesystem::path& path, const ImageGrid& img) {
    std::string buf;
    buf.reserve(std::size_t(img.rows) * std::size_t(img.cols) * 20);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            if (c) buf += ',';
            buf += detail::fmt_double(img.at(r, c));
        }
        buf += '\n';
    }
    detail::write_file_atomic(path, buf);
}

inline ImageGrid read_csv_matrix(const std::filesystem::path& path) {
    const std::string s = detail::read_file(path);
    const std::string label = "csv " + path.string();
    std::vector<std::vector<double>> rows;
    std::size_t i = 0, line = 0;
    while (i < s.size()) {
        ++line;
        std::size_t eol = s.find('\n', i);
        if (eol == std::string::npos) eol = s.size();
        if (eol > i) {
            std::vector<double> row;
            std::size_t j = i;
            while (j <= eol) {
                std::size_t k = j;
                while (k < eol && s[k] != ',') ++k;
                const std::string cell = s.substr(j, k - j);
                char* endp = nullptr;
                const double v = std::strtod(cell.c_str(), &endp);
                if (endp == cell.c_str() || *endp != '\0')
                    throw data_error(label + ": line " + std::to_string(line) +
                                     ": not a number: '" + cell + "'");
                row.push_back(v);
                j = k + 1;
                if (k == eol) break;
            }
            if (!rows.empty() && row.size() != rows.front().size())
                throw data_error(label + ": line " + std::to_string(line) +
                                 ": ragged row (expected " +
                                 std::to_string(rows.front().size()) + " cells)");
            rows.push_back(std::move(row));
        }
        i = eol + 1;
    }
    if (rows.empty()) throw data_error(label + ": empty file");
    ImageGrid img{int(rows.size()), int(rows.front().size()),
                  std::vector<double>(rows.size() * rows.front().size())};
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c) img.at(r, c) = rows[std::size_t(r)][std::size_t(c)];
    return img;
}

inline ImageGrid read_image_file(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".pgm") return read_pgm(path);
    if (ext == ".csv") return read_csv_matrix(path);
    throw data_error("unsupported image format '" + ext + "' for " + path.string() +
                     " (want .pgm or .csv)");
}

// ---------------------------------------------------------------------------
// Manifest: `path,image_id,group_label,unit_id`, one image per line. Relative
// image paths resolve against the manifest's own directory.

inline Dataset load_manifest(const std::filesystem::path& manifest_path) {
    const std::string s = detail::read_file(manifest_path);
    const std::filesystem::path base = manifest_path.parent_path();
    Dataset ds;
    std::size_t i = 0, line = 0;
    const std::string label = "manifest " + manifest_path.string();
    while (i < s.size()) {
        ++line;
        std::size_t eol = s.find('\n', i);
        if (eol == std::string::npos) eol = s.size();
        std::string row = s.substr(i, eol - i);
        i = eol + 1;
        if (!row.empty() && row.back() == '\r') row.pop_back();
        if (row.empty() || row[0] == '#') continue;
        if (line == 1 && row == "path,image_id,group_label,unit_id") continue;
        std::vector<std::string> fields;
        std::size_t j = 0;
        while (true) {
            std::size_t k = row.find(',', j);
            fields.push_back(row.substr(j, k == std::string::npos ? k : k - j));
            if (k == std::string::npos) break;
            j = k + 1;
        }
        if (fields.size() != 4)
            throw data_error(label + ": line " + std::to_string(line) + ": expected 4 fields " +
                             "(path,image_id,group_label,unit_id), got " +
                             std::to_string(fields.size()));
        for (std::size_t f = 0; f < 4; ++f)
            if (fields[f].empty())
                throw data_error(label + ": line " + std::to_string(line) + ": field " +
                                 std::to_string(f + 1) + " is empty");
        for (const auto& seen : ds.image_ids)
            if (seen == fields[1])
                throw data_error(label + ": line " + std::to_string(line) +
                                 ": duplicate image_id '" + fields[1] + "'");
        std::filesystem::path img_path = fields[0];
        if (img_path.is_relative()) img_path = base / img_path;
        if (!std::filesystem::exists(img_path))
            throw data_error(label + ": line " + std::to_string(line) + ": image file not found: " +
                             img_path.string());
        ds.images.push_back(read_image_file(img_path));
        ds.image_ids.push_back(fields[1]);
        ds.group_labels.push_back(fields[2]);
        ds.unit_ids.push_back(fields[3]);
    }
    if (ds.images.empty()) throw data_error(label + ": no images");
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Stage caches. Each one opens with a magic tag, a format version and the run
// config hash; loaders refuse files whose provenance does not match.

struct DatasetMeta {
    std::vector<std::string> image_ids, group_labels, unit_ids;
};

struct PreprocCache {
    std::uint64_t config_hash = 0;
    double epsilon = 0.0;
    int t1 = 0, t2 = 0;
    DatasetMeta meta;
    std::vector<ImageGrid> images;
};

inline void write_preproc_cache(const std::filesystem::path& path, const PreprocCache& pc) {
    detail::ByteWriter w;
    w.raw("IFMMPREP", 8);
    w.u32(1);
    w.u64(pc.config_hash);
    w.f64(pc.epsilon);
    w.i32(pc.t1);
    w.i32(pc.t2);
    w.u64(pc.images.size());
    for (std::size_t i = 0; i < pc.images.size(); ++i) {
        w.str(pc.meta.image_ids[i]);
        w.str(pc.meta.group_labels[i]);
        w.str(pc.meta.unit_ids[i]);
        w.raw(pc.images[i].v.data(), pc.images[i].v.size() * sizeof(double));
    }
    detail::write_file_atomic(path, w.buf);
}

inline PreprocCache read_preproc_cache(const std::filesystem::path& path,
                                       std::uint64_t expect_hash) {
    const std::string s = detail::read_file(path);
    detail::ByteReader r(s.data(), s.size(), "preprocessed cache " + path.string());
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, "IFMMPREP", 8) != 0) throw data_error(r.what + ": wrong magic");
    if (r.u32() != 1) throw data_error(r.what + ": unsupported version");
    PreprocCache pc;
    pc.config_hash = r.u64();
    if (pc.config_hash != expect_hash)
        throw data_error(r.what + ": config hash mismatch; rebuild the cache or change --out");
    pc.epsilon = r.f64();
    pc.t1 = r.i32();
    pc.t2 = r.i32();
    if (pc.t1 < 1 || pc.t2 < 1) throw data_error(r.what + ": bad dims");
    const std::uint64_t n = r.u64();
    const std::size_t npix = std::size_t(pc.t1) * std::size_t(pc.t2);
    for (std::uint64_t i = 0; i < n; ++i) {
        pc.meta.image_ids.push_back(r.str());
        pc.meta.group_labels.push_back(r.str());
        pc.meta.unit_ids.push_back(r.str());
        ImageGrid img{pc.t1, pc.t2, std::vector<double>(npix)};
        r.raw(img.v.data(), npix * sizeof(double));
        pc.images.push_back(std::move(img));
    }
    return pc;
}

struct CoefCache {
    std::uint64_t config_hash = 0;
    CoefSet coefs;
    DatasetMeta meta;
};

inline void write_coef_cache(const std::filesystem::path& path, const CoefCache& cc) {
    detail::ByteWriter w;
    w.raw("IFMMCOEF", 8);
    w.u32(1);
    w.u64(cc.config_hash);
    w.i32(cc.coefs.t1);
    w.i32(cc.coefs.t2);
    w.i32(cc.coefs.p1);
    w.i32(cc.coefs.p2);
    w.i32(cc.coefs.spec.moments);
    w.i32(cc.coefs.spec.levels);
    w.i32(int(cc.coefs.spec.kind));
    w.u64(cc.coefs.n_images);
    for (std::size_t i = 0; i < cc.coefs.n_images; ++i) {
        w.str(cc.meta.image_ids[i]);
        w.str(cc.meta.group_labels[i]);
        w.str(cc.meta.unit_ids[i]);
    }
    w.raw(cc.coefs.coefs.data(), cc.coefs.coefs.size() * sizeof(double));
    detail::write_file_atomic(path, w.buf);
}

inline CoefCache read_coef_cache(const std::filesystem::path& path, std::uint64_t expect_hash) {
    const std::string s = detail::read_file(path);
    detail::ByteReader r(s.data(), s.size(), "coefficient cache " + path.string());
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, "IFMMCOEF", 8) != 0) throw data_error(r.what + ": wrong magic");
    if (r.u32() != 1) throw data_error(r.what + ": unsupported version");
    CoefCache cc;
    cc.config_hash = r.u64();
    if (cc.config_hash != expect_hash)
        throw data_error(r.what + ": config hash mismatch; rebuild the cache or change --out");
    cc.coefs.t1 = r.i32();
    cc.coefs.t2 = r.i32();
    cc.coefs.p1 = r.i32();
    cc.coefs.p2 = r.i32();
    cc.coefs.spec.moments = r.i32();
    cc.coefs.spec.levels = r.i32();
    const int kind = r.i32();
    if (kind != 0 && kind != 1) throw data_error(r.what + ": bad transform kind");
    cc.coefs.spec.kind = TransformKind(kind);
    cc.coefs.spec.validate();
    cc.coefs.n_images = r.u64();
    for (std::size_t i = 0; i < cc.coefs.n_images; ++i) {
        cc.meta.image_ids.push_back(r.str());
        cc.meta.group_labels.push_back(r.str());
        cc.meta.unit_ids.push_back(r.str());
    }
    cc.coefs.coefs.resize(cc.coefs.n_images * cc.coefs.tpad());
    r.raw(cc.coefs.coefs.data(), cc.coefs.coefs.size() * sizeof(double));
    cc.coefs.index_map = coef_index_map(cc.coefs.p1, cc.coefs.p2, cc.coefs.spec);
    return cc;
}

// ---------------------------------------------------------------------------
// Retained-position mask: a small text file, positions written one-based.

inline void write_mask_file(const std::filesystem::path& path, const CompressionMask& mask,
                            int p1, int p2, std::uint64_t config_hash) {
    std::string buf = "# retained coefficient positions, one-based\n";
    buf += "config_hash " + hash_hex(config_hash) + "\n";
    buf += "dims " + std::to_string(p1) + " " + std::to_string(p2) + "\n";
    buf += "P " + detail::fmt_double(mask.P) + "\n";
    buf += "t_star " + std::to_string(mask.positions.size()) + "\n";
    for (std::int64_t pos : mask.positions) buf += std::to_string(pos + 1) + "\n";
    detail::write_file_atomic(path, buf);
}

struct MaskFile {
    CompressionMask mask;
    int p1 = 0, p2 = 0;
    std::uint64_t config_hash = 0;
};

inline MaskFile read_mask_file(const std::filesystem::path& path, std::uint64_t expect_hash) {
    const std::string s = detail::read_file(path);
    const std::string label = "mask " + path.string();
    std::istringstream in(s);
    std::string line;
    MaskFile mf;
    bool have_dims = false, have_p = false;
    std::size_t expect_count = 0;
    bool have_count = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "config_hash") {
            std::string hex;
            ls >> hex;
            mf.config_hash = std::stoull(hex, nullptr, 16);
        } else if (key == "dims") {
            ls >> mf.p1 >> mf.p2;
            have_dims = true;
        } else if (key == "P") {
            ls >> mf.mask.P;
            have_p = true;
        } else if (key == "t_star") {
            ls >> expect_count;
            have_count = true;
        } else {
            char* endp = nullptr;
            const long long v = std::strtoll(line.c_str(), &endp, 10);
            if (endp == line.c_str() || v < 1)
                throw data_error(label + ": bad position line '" + line + "'");
            mf.mask.positions.push_back(v - 1);
        }
    }
    if (!have_dims || !have_p || !have_count) throw data_error(label + ": missing header fields");
    if (mf.mask.positions.size() != expect_count)
        throw data_error(label + ": position count does not match t_star header");
    if (mf.config_hash != expect_hash)
        throw data_error(label + ": config hash mismatch; rebuild the mask or change --out");
    for (std::int64_t pos : mf.mask.positions)
        if (pos >= std::int64_t(mf.p1) * mf.p2)
            throw data_error(label + ": position exceeds the coefficient grid");
    return mf;
}

// ---------------------------------------------------------------------------
// Small CSV reports.

inline void write_compression_table(const std::filesystem::path& path,
                                    const std::vector<CompressionRow>& table) {
    std::string buf = "P,t_star,ratio\n";
    for (const auto& row : table)
        buf += detail::fmt_double(row.P) + "," + std::to_string(row.t_star) + "," +
               detail::fmt_double(row.ratio) + "\n";
    detail::write_file_atomic(path, buf);
}

inline void write_hyper_csv(const std::filesystem::path& path, const Hyperparams& hyper,
                            const std::vector<std::string>& covariate_names) {
    std::string buf = "covariate,scale,orient,pi,tau\n";
    for (const auto& [key, bh] : hyper.groups) {
        const auto& [a, scale, orient] = key;
        buf += covariate_names[std::size_t(a)] + "," + std::to_string(scale) + "," +
               std::to_string(orient) + "," + detail::fmt_double(bh.pi) + "," +
               detail::fmt_double(bh.tau) + "\n";
    }
    detail::write_file_atomic(path, buf);
}

// Region table in the report layout: x is the first image axis (row centroid),
// y the second, both one-based.
inline void write_region_csv(const std::filesystem::path& path,
                             const std::vector<Region>& regions) {
    std::string buf = "region_id,x,y,area,max_p\n";
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const Region& reg = regions[i];
        buf += std::to_string(i + 1) + "," + detail::fmt_double(reg.centroid_r + 1.0) + "," +
               detail::fmt_double(reg.centroid_c + 1.0) + "," + std::to_string(reg.area) + "," +
               detail::fmt_double(reg.max_prob) + "\n";
    }
    detail::write_file_atomic(path, buf);
}

// ---------------------------------------------------------------------------
// Draws file. Column-chunked doubles after a self-describing header; the
// reader maps the file and serves column chunks without copying.

struct DrawsHeader {
    std::uint64_t config_hash = 0, mask_hash = 0, design_hash = 0;
    std::uint64_t seed = 0;
    std::int32_t burn_in = 0, iterations = 0, thin = 0;
    std::int32_t t1 = 0, t2 = 0, p1 = 0, p2 = 0;
    std::int32_t moments = 0, levels = 0, kind = 0;
    std::int32_t N = 0, p = 0, m = 0;
    std::uint64_t n_draws = 0, t_star = 0;
    std::vector<std::string> covariate_names;
    std::vector<std::int64_t> positions;
    std::vector<double> acceptance;
};

inline void write_draws_file(const std::filesystem::path& path, const DrawsHeader& h,
                             const std::vector<double>& data) {
    if (data.size() != h.n_draws * (std::size_t(h.p) + 2) * h.t_star)
        throw data_error("draws payload does not match header dimensions");
    detail::ByteWriter w;
    w.raw("IFMMDRWS", 8);
    w.u32(1);
    w.u64(h.config_hash);
    w.u64(h.mask_hash);
    w.u64(h.design_hash);
    w.u64(h.seed);
    w.i32(h.burn_in);
    w.i32(h.iterations);
    w.i32(h.thin);
    w.i32(h.t1);
    w.i32(h.t2);
    w.i32(h.p1);
    w.i32(h.p2);
    w.i32(h.moments);
    w.i32(h.levels);
    w.i32(h.kind);
    w.i32(h.N);
    w.i32(h.p);
    w.i32(h.m);
    w.u64(h.n_draws);
    w.u64(h.t_star);
    for (const auto& name : h.covariate_names) w.str(name);
    w.raw(h.positions.data(), h.positions.size() * sizeof(std::int64_t));
    w.raw(h.acceptance.data(), h.acceptance.size() * sizeof(double));
    // pad so the draw payload starts 8-byte aligned in the mapping
    while (w.buf.size() % 8) w.buf.push_back('\0');
    const std::uint64_t payload_at = w.buf.size() + 8;
    w.u64(payload_at);
    w.raw(data.data(), data.size() * sizeof(double));
    detail::write_file_atomic(path, w.buf);
}

// Memory-mapped read-only view of a draws file.
class DrawsReader {
  public:
    explicit DrawsReader(const std::filesystem::path& path) : label_("draws " + path.string()) {
        fd_ = ::open(path.c_str(), O_RDONLY);
        if (fd_ < 0) throw data_error("cannot open " + path.string());
        struct stat st {};
        if (::fstat(fd_, &st) != 0 || st.st_size <= 0) {
            ::close(fd_);
            throw data_error(label_ + ": cannot stat or empty");
        }
        size_ = std::size_t(st.st_size);
        void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
        if (p == MAP_FAILED) {
            ::close(fd_);
            throw data_error(label_ + ": mmap failed");
        }
        base_ = static_cast<const char*>(p);
        parse_header();
    }
    DrawsReader(const DrawsReader&) = delete;
    DrawsReader& operator=(const DrawsReader&) = delete;
    ~DrawsReader() {
        if (base_) ::munmap(const_cast<char*>(base_), size_);
        if (fd_ >= 0) ::close(fd_);
    }

    const DrawsHeader& header() const { return h_; }

    // all retained records of column j: n_draws consecutive (p+2)-tuples
    const double* column_chunk(std::size_t j) const {
        return payload_ + j * h_.n_draws * (std::size_t(h_.p) + 2);
    }

    // materialize for in-memory inference
    PosteriorDraws load() const {
        PosteriorDraws d;
        d.n_draws = h_.n_draws;
        d.p = h_.p;
        d.positions = h_.positions;
        d.acceptance = h_.acceptance;
        const std::size_t n = h_.n_draws * (std::size_t(h_.p) + 2) * h_.t_star;
        d.data.assign(payload_, payload_ + n);
        return d;
    }

    TransformGeometry geometry() const {
        WaveletSpec spec;
        spec.moments = h_.moments;
        spec.levels = h_.levels;
        spec.kind = TransformKind(h_.kind);
        return TransformGeometry{h_.t1, h_.t2, h_.p1, h_.p2, spec};
    }

  private:
    void parse_header() {
        detail::ByteReader r(base_, size_, label_);
        char magic[8];
        r.raw(magic, 8);
        if (std::memcmp(magic, "IFMMDRWS", 8) != 0) throw data_error(label_ + ": wrong magic");
        if (r.u32() != 1) throw data_error(label_ + ": unsupported version");
        h_.config_hash = r.u64();
        h_.mask_hash = r.u64();
        h_.design_hash = r.u64();
        h_.seed = r.u64();
        h_.burn_in = r.i32();
        h_.iterations = r.i32();
        h_.thin = r.i32();
        h_.t1 = r.i32();
        h_.t2 = r.i32();
        h_.p1 = r.i32();
        h_.p2 = r.i32();
        h_.moments = r.i32();
        h_.levels = r.i32();
        h_.kind = r.i32();
        h_.N = r.i32();
        h_.p = r.i32();
        h_.m = r.i32();
        h_.n_draws = r.u64();
        h_.t_star = r.u64();
        if (h_.p < 1 || h_.kind < 0 || h_.kind > 1) throw data_error(label_ + ": bad header");
        for (int a = 0; a < h_.p; ++a) h_.covariate_names.push_back(r.str());
        h_.positions.resize(h_.t_star);
        r.raw(h_.positions.data(), h_.t_star * sizeof(std::int64_t));
        h_.acceptance.resize(h_.t_star);
        r.raw(h_.acceptance.data(), h_.t_star * sizeof(double));
        while ((r.p - base_) % 8) r.p += 1;
        const std::uint64_t payload_at = r.u64();
        const std::size_t n = h_.n_draws * (std::size_t(h_.p) + 2) * h_.t_star;
        if (payload_at % 8 != 0 || payload_at + n * sizeof(double) > size_)
            throw data_error(label_ + ": truncated payload");
        payload_ = reinterpret_cast<const double*>(base_ + payload_at);
    }

    std::string label_;
    int fd_ = -1;
    const char* base_ = nullptr;
    std::size_t size_ = 0;
    DrawsHeader h_;
    const double* payload_ = nullptr;
};

// ---------------------------------------------------------------------------
// Draw-major scratch matrix on disk, for pixelwise quantiles when
// n_draws * pixels is too large to hold. Rows are appended in draw order and
// read back in column tiles.

class ScratchMatrixFile {
  public:
    ScratchMatrixFile(const std::filesystem::path& path, std::size_t row_len)
        : path_(path), row_len_(row_len) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0600);
        if (fd_ < 0) throw data_error("cannot create scratch file " + path.string());
    }
    ScratchMatrixFile(const ScratchMatrixFile&) = delete;
    ScratchMatrixFile& operator=(const ScratchMatrixFile&) = delete;
    ~ScratchMatrixFile() {
        if (fd_ >= 0) ::close(fd_);
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

    void append_row(const double* row) {
        const std::size_t bytes = row_len_ * sizeof(double);
        const off_t at = off_t(rows_) * off_t(bytes);
        if (::pwrite(fd_, row, bytes, at) != ssize_t(bytes))
            throw data_error("short write to scratch file " + path_.string());
        ++rows_;
    }

    std::size_t rows() const { return rows_; }

    // gather columns [col0, col0+count) of every row into out, pixel-major:
    // out[(c - col0) * rows + r]
    void read_tile(std::size_t col0, std::size_t count, std::vector<double>& out) const {
        out.resize(count * rows_);
        std::vector<double> rowbuf(count);
        for (std::size_t r = 0; r < rows_; ++r) {
            const off_t at = off_t(r) * off_t(row_len_ * sizeof(double)) +
                             off_t(col0 * sizeof(double));
            const std::size_t bytes = count * sizeof(double);
            if (::pread(fd_, rowbuf.data(), bytes, at) != ssize_t(bytes))
                throw data_error("short read from scratch file " + path_.string());
            for (std::size_t c = 0; c < count; ++c) out[c * rows_ + r] = rowbuf[c];
        }
    }

  private:
    std::filesystem::path path_;
    std::size_t row_len_ = 0;
    std::size_t rows_ = 0;
    int fd_ = -1;
};

}  // namespace isofmm
