#pragma once

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "llcm/mlp.hpp"
#include "llcm/schedule.hpp"
#include "llcm/toy_worlds.hpp"

namespace llcm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, std::string_view content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for '" + p.string() + "'");
}

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
inline std::string git_hash(std::string_view content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw Error("git_hash: cannot allocate digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 && EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("git_hash: digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Sample CSV: header x0,...,x{d-1},label

inline std::string to_csv(const SampleBatch& b) {
    std::string s;
    for (std::size_t j = 0; j < b.dim(); ++j) s += "x" + std::to_string(j) + ",";
    s += "label\n";
    for (std::size_t r = 0; r < b.size(); ++r) {
        for (std::size_t j = 0; j < b.dim(); ++j) {
            s += format_double(b.points(r, j));
            s += ',';
        }
        s += std::to_string(r < b.labels.size() ? b.labels[r] : kNullToken);
        s += '\n';
    }
    return s;
}

inline SampleBatch parse_csv(std::string_view text, const std::string& origin = "<csv>") {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) lines.push_back(line);
        pos = nl + 1;
    }
    if (lines.empty()) throw Error(origin + ": empty CSV (no header)");
    auto split = [](std::string_view line) {
        std::vector<std::string_view> f;
        std::size_t p = 0;
        while (true) {
            const std::size_t c = line.find(',', p);
            f.push_back(line.substr(p, c == std::string_view::npos ? std::string_view::npos : c - p));
            if (c == std::string_view::npos) break;
            p = c + 1;
        }
        return f;
    };
    const auto header = split(lines[0]);
    std::size_t dim = 0;
    bool has_label = false;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "x" + std::to_string(i) && !has_label) {
            ++dim;
        } else if (header[i] == "label" && i == header.size() - 1) {
            has_label = true;
        } else {
            throw Error(origin + ": unexpected header column '" + std::string(header[i]) + "'");
        }
    }
    if (dim == 0) throw Error(origin + ": no coordinate columns");
    const std::size_t n = lines.size() - 1;
    SampleBatch b{Tensor::zeros(n, dim), std::vector<int>(n, kNullToken)};
    for (std::size_t r = 0; r < n; ++r) {
        const auto f = split(lines[r + 1]);
        if (f.size() != header.size()) throw Error(origin + ": row " + std::to_string(r + 1) + " has " + std::to_string(f.size()) + " fields, expected " + std::to_string(header.size()));
        for (std::size_t j = 0; j < dim; ++j) {
            double v = 0.0;
            const auto res = std::from_chars(f[j].data(), f[j].data() + f[j].size(), v);
            if (res.ec != std::errc() || res.ptr != f[j].data() + f[j].size())
                throw Error(origin + ": bad number '" + std::string(f[j]) + "' on row " + std::to_string(r + 1));
            b.points(r, j) = v;
        }
        if (has_label) {
            int v = 0;
            const auto& lf = f[dim];
            const auto res = std::from_chars(lf.data(), lf.data() + lf.size(), v);
            if (res.ec != std::errc() || res.ptr != lf.data() + lf.size()) throw Error(origin + ": bad label on row " + std::to_string(r + 1));
            b.labels[r] = v;
        }
    }
    return b;
}

inline SampleBatch read_csv(const fs::path& p) { return parse_csv(read_file(p), p.string()); }

inline fs::path sidecar_path(const fs::path& csv) {
    fs::path p = csv;
    return p.replace_extension(".json");
}

/// Writes the CSV and its JSON manifest sidecar.
inline void write_samples(const fs::path& csv, const SampleBatch& b) {
    write_file(csv, to_csv(b));
    write_file(sidecar_path(csv), b.manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest + little-endian float64 blob (<path>.bin).

inline ojson to_json(const MlpConfig& c) {
    return {{"point_dim", c.point_dim}, {"n_classes", c.n_classes}, {"c_embed_dim", c.c_embed_dim}, {"t_embed_dim", c.t_embed_dim}, {"omega_embed_dim", c.omega_embed_dim}, {"hidden", c.hidden}, {"activation", "gelu"}};
}

inline MlpConfig mlp_config_from_json(const ojson& j) {
    MlpConfig c;
    c.point_dim = j.at("point_dim").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.c_embed_dim = j.at("c_embed_dim").get<std::size_t>();
    c.t_embed_dim = j.at("t_embed_dim").get<std::size_t>();
    c.omega_embed_dim = j.value("omega_embed_dim", std::size_t{0});
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("activation") && j.at("activation") != "gelu") throw Error("unsupported activation " + j.at("activation").dump());
    return c;
}

inline ojson to_json(const ScheduleSpec& s) {
    return {{"kind", to_string(s.kind)}, {"N", s.N}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}};
}

inline ScheduleSpec schedule_from_json(const ojson& j) {
    ScheduleSpec s;
    s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    s.N = j.at("N").get<std::size_t>();
    s.beta_min = j.at("beta_min").get<double>();
    s.beta_max = j.at("beta_max").get<double>();
    return s;
}

struct Checkpoint {
    std::string kind;  // teacher | student | ema
    MlpParams params;
    ScheduleSpec schedule;
    std::size_t iteration = 0;
    /// Free-form provenance (world, codec, consistency-head constants, ...).
    ojson extra = ojson::object();
};

inline std::string encode_blob(const MlpParams& p) {
    std::string blob;
    blob.reserve(p.parameter_count() * 8);
    p.for_each([&](const std::string&, const Tensor& t) {
        for (double v : t.values()) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) blob += static_cast<char>((bits >> (8 * i)) & 0xff);
        }
    });
    return blob;
}

inline fs::path blob_path(const fs::path& manifest) { return fs::path(manifest.string() + ".bin"); }

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    const std::string blob = encode_blob(ck.params);
    ojson tensors = ojson::array();
    ck.params.for_each([&](const std::string& name, const Tensor& t) { tensors.push_back({{"name", name}, {"shape", t.shape()}}); });
    ojson m;
    m["format_version"] = kFormatVersion;
    m["kind"] = ck.kind;
    m["config"] = to_json(ck.params.config);
    m["schedule"] = to_json(ck.schedule);
    m["iteration"] = ck.iteration;
    m["tensors"] = tensors;
    m["blob"] = blob_path(path).filename().string();
    m["blob_bytes"] = blob.size();
    m["blob_hash"] = git_hash(blob);
    m["extra"] = ck.extra;
    write_file(blob_path(path), blob);
    write_file(path, m.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    ojson m;
    try {
        m = ojson::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint '" + path.string() + "': " + e.what());
    }
    if (m.value("format_version", 0) != kFormatVersion) throw Error("checkpoint '" + path.string() + "': unsupported format version");
    Checkpoint ck;
    ck.kind = m.at("kind").get<std::string>();
    ck.schedule = schedule_from_json(m.at("schedule"));
    ck.iteration = m.at("iteration").get<std::size_t>();
    ck.extra = m.value("extra", ojson::object());
    ck.params = init_mlp(mlp_config_from_json(m.at("config")), 0, true);
    const fs::path bp = path.parent_path() / m.at("blob").get<std::string>();
    const std::string blob = read_file(bp);
    if (blob.size() != ck.params.parameter_count() * 8) throw Error("checkpoint '" + path.string() + "': blob size does not match manifest shapes");
    if (m.contains("blob_hash") && m.at("blob_hash").get<std::string>() != git_hash(blob)) throw Error("checkpoint '" + path.string() + "': blob hash mismatch");
    std::size_t off = 0;
    std::size_t ti = 0;
    const auto& tensors = m.at("tensors");
    ck.params.for_each([&](const std::string& name, Tensor& t) {
        if (ti >= tensors.size() || tensors[ti].at("name") != name || tensors[ti].at("shape").get<Shape>() != t.shape())
            throw Error("checkpoint '" + path.string() + "': tensor table does not match config at " + name);
        ++ti;
        for (double& v : t.values()) {
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[off + static_cast<std::size_t>(i)])) << (8 * i);
            v = std::bit_cast<double>(bits);
            off += 8;
        }
    });
    return ck;
}

// Codec identity for manifests.
inline ojson to_json(const LatentCodec& c) { return {{"kind", c.kind}, {"seed", c.seed}, {"dim", c.data_dim()}}; }

inline LatentCodec codec_from_json(const ojson& j) {
    const auto kind = j.at("kind").get<std::string>();
    const auto dim = j.at("dim").get<std::size_t>();
    if (kind == "identity") return LatentCodec::identity(dim);
    if (kind == "rotation") return LatentCodec::rotation(dim, j.at("seed").get<std::uint64_t>());
    throw Error("unknown codec kind '" + kind + "' (valid: identity, rotation)");
}

}  // namespace llcm
