// SPDX-License-Identifier: Apache-2.0

#include "adamoe/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adamoe {

namespace {

constexpr char kMagic[8] = {'A', 'M', 'O', 'E', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(out, config_json.size());
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_pod<std::uint64_t>(out, params.size());
    for (const auto& [name, t] : params) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.values().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    }
    Checkpoint ckpt;
    auto cfg_len = read_pod<std::uint64_t>(in, path);
    ckpt.config_json.resize(cfg_len);
    in.read(ckpt.config_json.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    auto n = read_pod<std::uint64_t>(in, path);
    for (std::uint64_t i = 0; i < n; ++i) {
        CheckpointTensor t;
        auto name_len = read_pod<std::uint32_t>(in, path);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        auto rank = read_pod<std::uint32_t>(in, path);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            auto dim = read_pod<std::uint64_t>(in, path);
            t.shape.push_back(static_cast<std::size_t>(dim));
            numel *= static_cast<std::size_t>(dim);
        }
        t.values.resize(numel);
        in.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void restore_parameters(const Checkpoint& ckpt,
                        const std::vector<std::pair<std::string, Tensor>>& params) {
    if (ckpt.tensors.size() != params.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                                 " tensors, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        const CheckpointTensor& c = ckpt.tensors[i];
        if (c.name != name || c.shape != t.shape()) {
            throw std::runtime_error("checkpoint tensor \"" + c.name +
                                     "\" does not match parameter \"" + name + "\"");
        }
        const_cast<Tensor&>(t).values() = c.values;
    }
}

}  // namespace adamoe
