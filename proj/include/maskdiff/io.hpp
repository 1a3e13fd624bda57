// File side of the toolkit: binary PGM export of sampled grids, a small
// content digest, and the run manifest that records how an output tree was
// produced (command line, seed, config, input/output digests).
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskdiff/vocab.hpp"

namespace maskdiff {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw std::runtime_error("short write: " + path);
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    static const char* hexd = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[std::size_t(i)] = hexd[h & 0xf];
        h >>= 4;
    }
    return s;
}

inline std::string file_digest(const std::string& path) {
    std::string bytes = read_file(path);
    return digest_hex(fnv1a64(bytes.data(), bytes.size()));
}

// Renders sampled grid sequences as one binary PGM. Each sequence is a
// side-by-side tile read row major; tiles are packed left to right into a
// near-square montage. Gray levels spread the flat token index over 0..255,
// so mask tokens (which samplers never emit) would show as the brightest
// band. Unused tiles stay black.
inline std::string grids_to_pgm(const std::vector<Sequence>& seqs, int side,
                                const VocabSpec& spec) {
    if (side < 1) throw std::invalid_argument("grids_to_pgm: side must be positive");
    for (const auto& s : seqs)
        if (int(s.size()) != side * side)
            throw std::invalid_argument("grids_to_pgm: sequence is not a side*side grid");

    int tiles = int(seqs.size());
    int across = std::max(1, int(std::ceil(std::sqrt(double(tiles)))));
    int down = (tiles + across - 1) / across;
    if (down < 1) down = 1;
    int W = across * side;
    int H = down * side;

    std::vector<unsigned char> pix(std::size_t(W) * std::size_t(H), 0);
    int denom = spec.total() - 1;
    for (int n = 0; n < tiles; ++n) {
        int tx = (n % across) * side;
        int ty = (n / across) * side;
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) {
                int flat = flat_index(seqs[std::size_t(n)][std::size_t(r * side + c)], spec);
                double g = denom == 0 ? 0.0 : 255.0 * double(flat) / double(denom);
                pix[std::size_t(ty + r) * std::size_t(W) + std::size_t(tx + c)] =
                    static_cast<unsigned char>(std::lround(g));
            }
    }

    std::ostringstream os;
    os << "P5\n" << W << ' ' << H << "\n255\n";
    os.write(reinterpret_cast<const char*>(pix.data()), std::streamsize(pix.size()));
    return os.str();
}

inline void export_grid_pgm(const std::string& path, const std::vector<Sequence>& seqs,
                            int side, const VocabSpec& spec) {
    write_file(path, grids_to_pgm(seqs, side, spec));
}

// What a command run leaves behind, enough to reproduce it: the exact argv,
// the master seed, the effective configuration, and digests of every input
// consumed and output written. Outputs that are not byte-reproducible
// (wall-clock logs) are deliberately not listed.
struct RunManifest {
    std::string artifact_version = "0.1.0";
    std::vector<std::string> command;
    std::uint64_t master_seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::pair<std::string, std::string>> inputs;   // path, digest
    std::vector<std::pair<std::string, std::string>> outputs;  // path, digest

    void add_input(const std::string& path) { inputs.emplace_back(path, file_digest(path)); }
    void add_output(const std::string& path) { outputs.emplace_back(path, file_digest(path)); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["artifact_version"] = artifact_version;
        j["command"] = command;
        j["master_seed"] = master_seed;
        j["config"] = config;
        auto files = [](const std::vector<std::pair<std::string, std::string>>& v) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& [p, d] : v) arr.push_back({{"path", p}, {"digest", d}});
            return arr;
        };
        j["inputs"] = files(inputs);
        j["outputs"] = files(outputs);
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest man;
        man.artifact_version = j.at("artifact_version").get<std::string>();
        man.command = j.at("command").get<std::vector<std::string>>();
        man.master_seed = j.at("master_seed").get<std::uint64_t>();
        man.config = j.at("config");
        for (const auto& e : j.at("inputs"))
            man.inputs.emplace_back(e.at("path").get<std::string>(),
                                    e.at("digest").get<std::string>());
        for (const auto& e : j.at("outputs"))
            man.outputs.emplace_back(e.at("path").get<std::string>(),
                                     e.at("digest").get<std::string>());
        return man;
    }
};

inline void save_manifest(const std::string& path, const RunManifest& man) {
    write_file(path, man.to_json().dump(2) + "\n");
}

inline RunManifest load_manifest(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    return RunManifest::from_json(j);
}

}  // namespace maskdiff
