#include "hgan/ingest.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hgan/error.hpp"
#include "hgan/rng.hpp"

namespace hgan {

namespace {

constexpr char kMagic32[4] = {'H', 'G', 'T', '1'};
constexpr char kMagic64[4] = {'H', 'G', 'T', '8'};

[[noreturn]] void format_error(const std::string& context, std::size_t offset,
                               const std::string& what) {
    throw DataError(context + ": " + what + " at byte " + std::to_string(offset));
}

void read_exact(std::istream& in, char* buf, std::size_t n, const std::string& context,
                std::size_t offset, const char* what) {
    in.read(buf, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) format_error(context, offset, what);
}

std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void put_le32(std::uint32_t v, std::ostream& out) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8 & 0xff),
                          static_cast<unsigned char>(v >> 16 & 0xff),
                          static_cast<unsigned char>(v >> 24 & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

Tensor read_blob_stream(std::istream& in, const std::string& context, bool wide) {
    const char* magic = wide ? kMagic64 : kMagic32;
    std::size_t offset = 0;
    char header[4];
    read_exact(in, header, 4, context, offset, "truncated magic");
    if (std::memcmp(header, magic, 4) != 0) format_error(context, 0, "bad magic");
    offset = 4;

    unsigned char rank_byte;
    read_exact(in, reinterpret_cast<char*>(&rank_byte), 1, context, offset, "truncated rank");
    offset += 1;
    const std::size_t rank = rank_byte;
    if (rank == 0 || rank > 4) format_error(context, 4, "unsupported rank");

    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        unsigned char dim[4];
        read_exact(in, reinterpret_cast<char*>(dim), 4, context, offset, "truncated dims");
        shape[i] = le32(dim);
        if (shape[i] == 0) format_error(context, offset, "zero dimension");
        total *= shape[i];
        offset += 4;
    }

    std::vector<double> data(total);
    if (wide) {
        for (std::size_t i = 0; i < total; ++i) {
            char raw[8];
            read_exact(in, raw, 8, context, offset, "truncated payload");
            double v;
            std::memcpy(&v, raw, 8);
            data[i] = v;
            offset += 8;
        }
    } else {
        for (std::size_t i = 0; i < total; ++i) {
            char raw[4];
            read_exact(in, raw, 4, context, offset, "truncated payload");
            float v;
            std::memcpy(&v, raw, 4);
            if (!std::isfinite(v)) format_error(context, offset, "non-finite entry");
            data[i] = static_cast<double>(v);
            offset += 4;
        }
    }
    return Tensor(std::move(shape), std::move(data));
}

void write_blob_stream(std::ostream& out, const Tensor& t, bool wide) {
    out.write(wide ? kMagic64 : kMagic32, 4);
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::size_t d : t.shape()) put_le32(static_cast<std::uint32_t>(d), out);
    if (wide) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = t[i];
            char raw[8];
            std::memcpy(raw, &v, 8);
            out.write(raw, 8);
        }
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const float v = static_cast<float>(t[i]);
            char raw[4];
            std::memcpy(raw, &v, 4);
            out.write(raw, 4);
        }
    }
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

} // namespace

Tensor read_blob(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_blob_stream(in, path.string(), false);
}

void write_blob(const std::filesystem::path& path, const Tensor& t) {
    auto out = open_out(path);
    write_blob_stream(out, t, false);
}

Tensor read_blob64(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_blob_stream(in, path.string(), true);
}

void write_blob64(const std::filesystem::path& path, const Tensor& t) {
    auto out = open_out(path);
    write_blob_stream(out, t, true);
}

Tensor read_blob64(std::istream& in, const std::string& context) {
    return read_blob_stream(in, context, true);
}

void write_blob64(std::ostream& out, const Tensor& t) { write_blob_stream(out, t, true); }

DatasetManifest read_manifest(const std::filesystem::path& path) {
    auto in = open_in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.d0 = j.at("D0").get<std::size_t>();
        m.d1 = j.at("D1").get<std::size_t>();
        m.group_size = j.at("group_size").get<std::size_t>();
        m.split = j.at("split").get<std::string>();
        for (const auto& s : j.at("samples")) {
            ManifestSample ms;
            ms.sample_id = s.at("sample_id").get<std::string>();
            ms.caption_group_id = s.at("caption_group_id").get<std::string>();
            ms.global_path = s.at("global").get<std::string>();
            ms.regions_path = s.at("regions").get<std::string>();
            ms.tokens_path = s.at("tokens").get<std::string>();
            m.samples.push_back(std::move(ms));
        }
        if (j.contains("folds"))
            m.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    nlohmann::json j;
    j["name"] = m.name;
    j["D0"] = m.d0;
    j["D1"] = m.d1;
    j["group_size"] = m.group_size;
    j["split"] = m.split;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) {
        j["samples"].push_back({{"sample_id", s.sample_id},
                                {"caption_group_id", s.caption_group_id},
                                {"global", s.global_path},
                                {"regions", s.regions_path},
                                {"tokens", s.tokens_path}});
    }
    if (!m.folds.empty()) j["folds"] = m.folds;
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();

    std::map<std::string, Tensor> cache;
    auto load = [&](const std::string& rel) -> const Tensor& {
        auto it = cache.find(rel);
        if (it == cache.end()) it = cache.emplace(rel, read_blob(base / rel)).first;
        return it->second;
    };

    auto check_dims = [&](const Tensor& t, std::size_t want_cols, const std::string& rel) {
        if (t.rank() != 2)
            throw DataError("blob " + rel + ": expected rank 2, got rank " +
                            std::to_string(t.rank()));
        if (t.cols() != want_cols)
            throw DataError("blob " + rel + ": feature dim " + std::to_string(t.cols()) +
                            " disagrees with manifest " + std::to_string(want_cols));
    };

    std::map<std::string, std::size_t> group_index;
    for (const auto& s : ds.manifest.samples) {
        LoadedSample ls;
        ls.sample_id = s.sample_id;
        ls.caption_group_id = s.caption_group_id;
        ls.global = load(s.global_path);
        check_dims(ls.global, ds.manifest.d0, s.global_path);
        ls.regions = load(s.regions_path);
        check_dims(ls.regions, ds.manifest.d0, s.regions_path);
        ls.tokens = load(s.tokens_path);
        check_dims(ls.tokens, ds.manifest.d1, s.tokens_path);

        auto [it, inserted] = group_index.emplace(s.caption_group_id, ds.group_ids.size());
        if (inserted) {
            ds.group_ids.push_back(s.caption_group_id);
            ds.group_representative.push_back(ds.samples.size());
        }
        ds.sample_group.push_back(it->second);
        ds.group_samples[s.caption_group_id].push_back(ds.samples.size());
        ds.samples.push_back(std::move(ls));
    }

    for (const auto& [gid, members] : ds.group_samples) {
        if (members.size() != ds.manifest.group_size)
            throw DataError("caption group " + gid + " has " + std::to_string(members.size()) +
                            " captions, manifest group_size is " +
                            std::to_string(ds.manifest.group_size));
    }
    return ds;
}

DatasetManifest generate_synthetic(const SyntheticConfig& cfg,
                                   const std::filesystem::path& out_dir) {
    if (cfg.n_groups == 0 || cfg.m == 0 || cfg.k == 0 || cfg.l == 0 || cfg.d0 == 0 ||
        cfg.d1 == 0 || cfg.latent_dim == 0 || cfg.group_size == 0)
        throw ConfigError("generate_synthetic: all counts must be >= 1");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "blobs", ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string());

    Rng rng(cfg.seed);
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
    auto draw_matrix = [&](std::size_t rows, std::size_t cols, double s) {
        Tensor t({rows, cols});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal();
        return t;
    };

    // dataset-wide mixing maps from the latent concept space
    const Tensor mix_global = draw_matrix(cfg.d0, cfg.latent_dim, mix_scale);
    const Tensor mix_region = draw_matrix(cfg.d0, cfg.latent_dim, mix_scale);
    const Tensor mix_token = draw_matrix(cfg.d1, cfg.latent_dim, mix_scale);

    auto noisy_rows = [&](const Tensor& mix, const Tensor& latent, std::size_t rows) {
        Tensor out({rows, mix.rows()});
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < mix.rows(); ++c) {
                double v = 0.0;
                for (std::size_t z = 0; z < latent.size(); ++z)
                    v += mix.at(c, z) * latent[z];
                out.at(r, c) = v + cfg.noise * rng.normal();
            }
        return out;
    };

    DatasetManifest m;
    m.name = cfg.name;
    m.d0 = cfg.d0;
    m.d1 = cfg.d1;
    m.group_size = cfg.group_size;
    m.split = cfg.split;

    char buf[64];
    for (std::size_t g = 0; g < cfg.n_groups; ++g) {
        Tensor latent({cfg.latent_dim});
        for (std::size_t z = 0; z < cfg.latent_dim; ++z) latent[z] = rng.normal();

        std::snprintf(buf, sizeof buf, "g%04zu", g);
        const std::string gid = buf;
        const std::string g_rel = "blobs/" + gid + "_G.bin";
        const std::string l_rel = "blobs/" + gid + "_L.bin";
        write_blob(out_dir / g_rel, noisy_rows(mix_global, latent, cfg.m));
        write_blob(out_dir / l_rel, noisy_rows(mix_region, latent, cfg.k));

        for (std::size_t c = 0; c < cfg.group_size; ++c) {
            std::snprintf(buf, sizeof buf, "%s_c%zu", gid.c_str(), c);
            const std::string sid = buf;
            const std::string s_rel = "blobs/" + sid + "_S.bin";
            write_blob(out_dir / s_rel, noisy_rows(mix_token, latent, cfg.l));
            m.samples.push_back({sid, gid, g_rel, l_rel, s_rel});
        }
    }
    write_manifest(out_dir / "manifest.json", m);
    return m;
}

} // namespace hgan
