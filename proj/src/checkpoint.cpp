#include "hgan/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "hgan/config.hpp"
#include "hgan/error.hpp"
#include "hgan/ingest.hpp"

namespace hgan {

namespace {

constexpr char kMagic[4] = {'H', 'G', 'K', '1'};

void put_u64(std::uint64_t v, std::ostream& out) {
    char raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<char>(v >> (8 * i) & 0xff);
    out.write(raw, 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char raw[8];
    in.read(reinterpret_cast<char*>(raw), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const TrainConfig& train, const AdamState* adam, std::size_t step,
                     std::size_t epoch) {
    nlohmann::json header;
    header["format"] = "hgan-checkpoint";
    header["version"] = 1;
    header["model"] = params.config;
    header["train"] = train;
    header["step"] = step;
    header["epoch"] = epoch;

    std::vector<const Tensor*> blobs;
    nlohmann::json names = nlohmann::json::array();
    for_each_param(params, [&](const std::string& name, const Tensor& t) {
        names.push_back(name);
        blobs.push_back(&t);
    });
    header["params"] = names;

    nlohmann::json state_names = nlohmann::json::array();
    for_each_state(params, [&](const std::string& name, const Tensor& t) {
        state_names.push_back(name);
        blobs.push_back(&t);
    });
    header["states"] = state_names;

    header["has_adam"] = adam != nullptr;
    if (adam) {
        header["adam_step"] = adam->step_count();
        for (const Tensor& t : adam->first_moments()) blobs.push_back(&t);
        for (const Tensor& t : adam->second_moments()) blobs.push_back(&t);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    const std::string head = header.dump();
    out.write(kMagic, 4);
    put_u64(head.size(), out);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const Tensor* t : blobs) write_blob64(out, *t);
    if (!out) throw DataError("write failure on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint " + path.string() + ": bad magic");
    const std::uint64_t head_len = get_u64(in);
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (static_cast<std::uint64_t>(in.gcount()) != head_len)
        throw DataError("checkpoint " + path.string() + ": truncated header");

    nlohmann::json header;
    ModelConfig model_cfg;
    Checkpoint ck;
    try {
        header = nlohmann::json::parse(head);
        model_cfg = header.at("model").get<ModelConfig>();
        ck.train = header.at("train").get<TrainConfig>();
        ck.step = header.at("step").get<std::size_t>();
        ck.epoch = header.at("epoch").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }

    ck.params = init_params(model_cfg, ck.train.seed);

    const auto names = header.at("params").get<std::vector<std::string>>();
    std::size_t next = 0;
    for_each_param(ck.params, [&](const std::string& name, Tensor& t) {
        if (next >= names.size() || names[next] != name)
            throw DataError("checkpoint " + path.string() + ": parameter list mismatch at " +
                            name);
        Tensor loaded = read_blob64(in, path.string() + ":" + name);
        if (!loaded.same_shape(t))
            throw DataError("checkpoint " + path.string() + ": shape mismatch for " + name);
        t = std::move(loaded);
        ++next;
    });

    const auto state_names = header.at("states").get<std::vector<std::string>>();
    next = 0;
    for_each_state(ck.params, [&](const std::string& name, Tensor& t) {
        if (next >= state_names.size() || state_names[next] != name)
            throw DataError("checkpoint " + path.string() + ": state list mismatch at " +
                            name);
        Tensor loaded = read_blob64(in, path.string() + ":" + name);
        if (!loaded.same_shape(t))
            throw DataError("checkpoint " + path.string() + ": shape mismatch for " + name);
        t = std::move(loaded);
        ++next;
    });

    if (header.value("has_adam", false)) {
        std::vector<ParamRef> refs = param_refs(ck.params);
        AdamState adam(refs);
        for (Tensor& t : adam.first_moments()) t = read_blob64(in, path.string() + ":adam.m");
        for (Tensor& t : adam.second_moments()) t = read_blob64(in, path.string() + ":adam.v");
        adam.set_step_count(header.at("adam_step").get<std::int64_t>());
        ck.adam = std::move(adam);
    }
    return ck;
}

} // namespace hgan
