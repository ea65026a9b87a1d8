#include "babyit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

namespace babyit::checkpoint {

namespace {

constexpr char kMagic[8] = {'B', 'A', 'B', 'Y', 'I', 'T', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

template <class U>
U get(std::string_view& in) {
    if (in.size() < sizeof(U)) {
        throw Error("checkpoint truncated");
    }
    U value;
    std::memcpy(&value, in.data(), sizeof(U));
    in.remove_prefix(sizeof(U));
    return value;
}

}  // namespace

void save(const std::filesystem::path& path, const Model& model, const Json& provenance) {
    auto& m = const_cast<Model&>(model);
    Json tensors = Json::array();
    for (auto& nt : m.named()) {
        tensors.push_back(Json{{"name", nt.name}, {"rows", nt.tensor->value.rows()}, {"cols", nt.tensor->value.cols()}});
    }
    const Json header{{"config", model.config.to_json()}, {"tensors", tensors}, {"dtype", "float32"}, {"provenance", provenance}};
    const auto header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, header_text.size());
    out += header_text;
    for (auto& nt : m.named()) {
        const auto& v = nt.tensor->value;
        out.append(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(float));
    }
    write_file(path, out);
}

Loaded load(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::string_view in(bytes);
    if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
        throw Error(fmt::format("{}: not a babyit checkpoint", path.string()));
    }
    in.remove_prefix(sizeof(kMagic));
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion) {
        throw Error(fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
    }
    const auto header_len = get<std::uint64_t>(in);
    if (in.size() < header_len) {
        throw Error("checkpoint truncated");
    }
    const auto header = Json::parse(in.substr(0, header_len));
    in.remove_prefix(header_len);

    Loaded out{Model::init(ModelConfig::from_json(header.at("config")), 0), header.value("provenance", Json::object())};
    auto named = out.model.named();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size()) {
        throw Error(fmt::format("{}: expected {} tensors, found {}", path.string(), named.size(), tensors.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& v = named[i].tensor->value;
        if (tensors[i].at("name").get<std::string>() != named[i].name || tensors[i].at("rows").get<Eigen::Index>() != v.rows() ||
            tensors[i].at("cols").get<Eigen::Index>() != v.cols()) {
            throw Error(fmt::format("{}: tensor {} does not match the model config", path.string(), named[i].name));
        }
        const auto n = static_cast<std::size_t>(v.size()) * sizeof(float);
        if (in.size() < n) {
            throw Error("checkpoint truncated");
        }
        std::memcpy(v.data(), in.data(), n);
        in.remove_prefix(n);
    }
    if (!in.empty()) {
        throw Error(fmt::format("{}: trailing bytes after tensor data", path.string()));
    }
    return out;
}

}  // namespace babyit::checkpoint
