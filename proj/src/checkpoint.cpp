#include "mftsim/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mftsim/errors.hpp"

namespace mft {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'F', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamVector& theta) {
    json header = {
        {"schema_version", meta.schema_version},
        {"model_spec",
         {{"layers", meta.model_spec.layer_sizes},
          {"activation", to_string(meta.model_spec.activation)},
          {"seed", meta.model_spec.seed}}},
        {"seed", meta.seed},
        {"role", meta.role},
        {"provenance", meta.provenance},
    };
    std::string hs = header.dump();

    std::string out;
    out.reserve(16 + hs.size() + 8 + theta.size() * 8);
    out.append(kMagic, sizeof(kMagic));
    put_u64(out, hs.size());
    out.append(hs);
    put_u64(out, theta.size());
    for (double d : theta.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64(out, bits);
    }

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(f.good(), "save_checkpoint: write failed for " + path);
}

std::pair<CheckpointMeta, ParamVector> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "load_checkpoint: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    require(data.size() >= 24 && std::memcmp(data.data(), kMagic, 8) == 0,
            "load_checkpoint: bad magic in " + path);
    std::uint64_t hlen = get_u64(data.data() + 8);
    require(data.size() >= 24 + hlen, "load_checkpoint: truncated header in " + path);
    json header = json::parse(data.substr(16, hlen));

    CheckpointMeta meta;
    meta.schema_version = header.at("schema_version").get<int>();
    meta.model_spec.layer_sizes = header.at("model_spec").at("layers").get<std::vector<int>>();
    meta.model_spec.activation =
        activation_from_string(header.at("model_spec").at("activation").get<std::string>());
    meta.model_spec.seed = header.at("model_spec").at("seed").get<std::uint64_t>();
    meta.seed = header.at("seed").get<std::uint64_t>();
    meta.role = header.at("role").get<std::string>();
    meta.provenance = header.at("provenance").get<std::map<std::string, std::string>>();

    std::size_t pos = 16 + hlen;
    std::uint64_t count = get_u64(data.data() + pos);
    pos += 8;
    require(data.size() == pos + count * 8, "load_checkpoint: payload length mismatch in " + path);
    ParamVector theta(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint64_t bits = get_u64(data.data() + pos + i * 8);
        std::memcpy(&theta[i], &bits, 8);
    }
    return {meta, theta};
}

} // namespace mft
