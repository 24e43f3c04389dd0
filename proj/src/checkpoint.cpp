#include "tkgr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace tkgr::num {

namespace {

constexpr char kMagic[8] = {'T', 'K', 'G', 'R', 'C', 'K', 'P', '1'};

template <typename T>
void write_raw(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
    std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("checkpoint: cannot open " + tmp.string());
        out.write(kMagic, sizeof(kMagic));
        write_raw<std::uint64_t>(out, params.size());
        for (const auto& [name, t] : params) {
            write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_raw<std::uint8_t>(out, t.requires_grad() ? 1 : 0);
            write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
            for (auto d : t.shape()) write_raw<std::uint64_t>(out, d);
            auto vals = t.values();
            out.write(reinterpret_cast<const char*>(vals.data()),
                      static_cast<std::streamsize>(vals.size() * sizeof(double)));
        }
        if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
}

ParamStore load_checkpoint(const std::string& path, bool trainable) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("checkpoint: bad magic header in " + path);
    auto count = read_raw<std::uint64_t>(in);
    ParamStore params;
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name_len = read_raw<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto is_param = read_raw<std::uint8_t>(in);
        auto rank = read_raw<std::uint32_t>(in);
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(read_raw<std::uint64_t>(in));
            numel *= d;
        }
        std::vector<double> data(numel);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!in) throw CheckpointError("checkpoint: truncated tensor " + name);
        Tensor t = (trainable && is_param)
                       ? Tensor::parameter(std::move(shape), std::move(data))
                       : Tensor::from(std::move(shape), std::move(data));
        params.emplace(std::move(name), std::move(t));
    }
    return params;
}

}  // namespace tkgr::num
