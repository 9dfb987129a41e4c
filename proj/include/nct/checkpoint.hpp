#pragma once

// Binary checkpoint files.
//
// Layout (little-endian throughout):
//   8 bytes   magic "NCTCKPT1"
//   u32       stage (1..3)
//   u64       completed steps within that stage
//   u64       model fingerprint (hash of the architecture fields)
//   u64       vocabulary hash
//   u8        1 if optimizer state follows the tensors, else 0
//   [optimizer config: f64 base_lr, u64 warmup, f64 beta1, f64 beta2,
//    f64 eps, u64 model_dim, u64 t  -- only when the flag is set]
//   u32       tensor count
//   per tensor: u16 name length, name bytes, u8 rank, u64 dims..., f64 data...
//   [per tensor: f64 m..., f64 v...  -- only when the flag is set]
//
// Writes go to "<path>.tmp" first and are renamed into place, so a crash
// mid-write never leaves a truncated file under the real name. Loads verify
// the magic, the fingerprints and every tensor's name and shape against the
// live model before touching it.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/adam.hpp"
#include "nct/model.hpp"

namespace nct {

inline constexpr char kCheckpointMagic[8] = {'N', 'C', 'T', 'C',
                                             'K', 'P', 'T', '1'};

// FNV-1a over the architecture-defining fields. Training hyperparameters do
// not participate: a checkpoint stays loadable when only those change.
inline std::uint64_t model_fingerprint(const ModelConfig& cfg) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    mix(cfg.layers);
    mix(cfg.hidden);
    mix(cfg.ffn);
    mix(cfg.heads);
    mix(cfg.vocab);
    mix(cfg.max_seq);
    mix(cfg.max_turns);
    return h;
}

struct CheckpointMeta {
    std::uint32_t stage = 0;
    std::uint64_t step = 0;  // completed steps within the stage
    std::uint64_t model_fp = 0;
    std::uint64_t vocab_hash = 0;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw std::runtime_error(std::string("checkpoint: truncated while reading ") +
                                 what);
    return v;
}

inline void put_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void get_doubles(std::istream& is, std::vector<double>& v,
                        const char* what) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is)
        throw std::runtime_error(std::string("checkpoint: truncated while reading ") +
                                 what);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ModelParams& params,
                            const AdamState* adam, const CheckpointMeta& meta) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("checkpoint: cannot open '" + tmp +
                                     "' for writing");
        os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        detail::put(os, meta.stage);
        detail::put(os, meta.step);
        detail::put(os, meta.model_fp);
        detail::put(os, meta.vocab_hash);
        detail::put<std::uint8_t>(os, adam ? 1 : 0);
        if (adam) {
            detail::put(os, adam->cfg.base_lr);
            detail::put<std::uint64_t>(os, adam->cfg.warmup_steps);
            detail::put(os, adam->cfg.beta1);
            detail::put(os, adam->cfg.beta2);
            detail::put(os, adam->cfg.eps);
            detail::put<std::uint64_t>(os, adam->cfg.model_dim);
            detail::put(os, adam->t);
        }

        std::vector<std::string> names = params.parameter_names();
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(names.size()));
        std::size_t pi = 0;
        params.for_each_param([&](const std::string& name, Tensor& t) {
            detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
            for (std::size_t d : t.shape()) detail::put<std::uint64_t>(os, d);
            detail::put_doubles(os, t.vec());
            ++pi;
        });
        if (adam) {
            if (adam->m.size() != names.size())
                throw std::invalid_argument(
                    "checkpoint: optimizer slots do not match the model");
            for (std::size_t i = 0; i < names.size(); ++i) {
                detail::put_doubles(os, adam->m[i]);
                detail::put_doubles(os, adam->v[i]);
            }
        }
        os.flush();
        if (!os) throw std::runtime_error("checkpoint: write to '" + tmp + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

// Loads into an already constructed model (and optionally optimizer state).
// `expect_fp`/`expect_vocab` guard against mixing incompatible artifacts.
inline CheckpointMeta load_checkpoint(const std::string& path,
                                      ModelParams& params, AdamState* adam,
                                      std::uint64_t expect_fp,
                                      std::uint64_t expect_vocab) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: '" + path +
                                 "' does not start with the NCTCKPT1 magic");
    CheckpointMeta meta;
    meta.stage = detail::get<std::uint32_t>(is, "stage");
    meta.step = detail::get<std::uint64_t>(is, "step");
    meta.model_fp = detail::get<std::uint64_t>(is, "model fingerprint");
    meta.vocab_hash = detail::get<std::uint64_t>(is, "vocab hash");
    if (meta.model_fp != expect_fp)
        throw std::runtime_error(
            "checkpoint: model fingerprint mismatch, the file was written by a "
            "different architecture");
    if (meta.vocab_hash != expect_vocab)
        throw std::runtime_error(
            "checkpoint: vocabulary hash mismatch, the file was written with a "
            "different vocabulary");
    const std::uint8_t has_adam = detail::get<std::uint8_t>(is, "optimizer flag");
    AdamConfig acfg;
    std::uint64_t adam_t = 0;
    if (has_adam) {
        acfg.base_lr = detail::get<double>(is, "optimizer base_lr");
        acfg.warmup_steps = detail::get<std::uint64_t>(is, "optimizer warmup");
        acfg.beta1 = detail::get<double>(is, "optimizer beta1");
        acfg.beta2 = detail::get<double>(is, "optimizer beta2");
        acfg.eps = detail::get<double>(is, "optimizer eps");
        acfg.model_dim = detail::get<std::uint64_t>(is, "optimizer model_dim");
        adam_t = detail::get<std::uint64_t>(is, "optimizer step counter");
    }
    if (adam && !has_adam)
        throw std::runtime_error(
            "checkpoint: '" + path +
            "' carries no optimizer state but resuming needs it");

    const std::uint32_t n = detail::get<std::uint32_t>(is, "tensor count");
    std::vector<std::string> names = params.parameter_names();
    if (n != names.size())
        throw std::runtime_error("checkpoint: file holds " + std::to_string(n) +
                                 " tensors, model wants " +
                                 std::to_string(names.size()));
    params.for_each_param([&](const std::string& name, Tensor& t) {
        const std::uint16_t len = detail::get<std::uint16_t>(is, "tensor name");
        std::string fname(len, '\0');
        is.read(fname.data(), len);
        if (!is || fname != name)
            throw std::runtime_error("checkpoint: expected tensor '" + name +
                                     "', file has '" + fname + "'");
        const std::uint8_t rank = detail::get<std::uint8_t>(is, "tensor rank");
        if (rank != t.rank())
            throw std::runtime_error("checkpoint: rank mismatch for '" + name + "'");
        for (std::size_t d : t.shape()) {
            const std::uint64_t fd = detail::get<std::uint64_t>(is, "tensor dim");
            if (fd != d)
                throw std::runtime_error("checkpoint: shape mismatch for '" +
                                         name + "'");
        }
        detail::get_doubles(is, t.vec(), name.c_str());
    });
    if (adam) {
        *adam = AdamState::init(acfg, params.parameters());
        adam->t = adam_t;
        for (std::size_t i = 0; i < adam->m.size(); ++i) {
            detail::get_doubles(is, adam->m[i], "optimizer first moment");
            detail::get_doubles(is, adam->v[i], "optimizer second moment");
        }
    }
    return meta;
}

}  // namespace nct
