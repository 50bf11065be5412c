#include "stmoe/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace stmoe {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'M', 'B'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw std::runtime_error("load_checkpoint: " + path + " is truncated");
    }
    return v;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) {
        throw std::runtime_error("checkpoint metadata missing key '" + key + "'");
    }
    return std::stoi(it->second);
}

double meta_double(const std::map<std::string, std::string>& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) {
        throw std::runtime_error("checkpoint metadata missing key '" + key + "'");
    }
    return std::stod(it->second);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_u32(out, ck.version);

    std::string meta;
    for (const auto& [k, v] : ck.metadata) {
        meta += k;
        meta += '=';
        meta += v;
        meta += '\n';
    }
    write_u32(out, static_cast<std::uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));

    for (const auto& [name, t] : ck.tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(t->shape.size()));
        for (int d : t->shape) write_u32(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("load_checkpoint: " + path + " is not an STMB checkpoint");
    }
    Checkpoint ck;
    ck.version = read_u32(in, path);
    if (ck.version != 1) {
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(ck.version));
    }
    const std::uint32_t meta_len = read_u32(in, path);
    std::string meta(meta_len, '\0');
    if (!in.read(meta.data(), meta_len)) {
        throw std::runtime_error("load_checkpoint: " + path + " is truncated");
    }
    std::size_t pos = 0;
    while (pos < meta.size()) {
        const std::size_t nl = meta.find('\n', pos);
        const std::string line = meta.substr(pos, nl - pos);
        pos = (nl == std::string::npos) ? meta.size() : nl + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("load_checkpoint: malformed metadata line '" + line + "'");
        }
        ck.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }

    while (in.peek() != std::ifstream::traits_type::eof()) {
        const std::uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw std::runtime_error("load_checkpoint: " + path + " is truncated");
        }
        const std::uint32_t rank = read_u32(in, path);
        std::vector<int> shape(rank);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(read_u32(in, path));
            numel *= d;
        }
        auto t = Tensor::zeros(shape);
        if (!in.read(reinterpret_cast<char*>(t->data.data()),
                     static_cast<std::streamsize>(numel * sizeof(double)))) {
            throw std::runtime_error("load_checkpoint: " + path + " is truncated in tensor '" +
                                     name + "'");
        }
        ck.tensors[name] = t;
    }
    return ck;
}

std::map<std::string, std::string> metadata_from_config(const ModelConfig& cfg) {
    std::map<std::string, std::string> m;
    m["cfg.G"] = std::to_string(cfg.G);
    m["cfg.seq_len"] = std::to_string(cfg.seq_len);
    m["cfg.e_day"] = std::to_string(cfg.e_day);
    m["cfg.e_time"] = std::to_string(cfg.e_time);
    m["cfg.e_dow"] = std::to_string(cfg.e_dow);
    m["cfg.e_wk"] = std::to_string(cfg.e_wk);
    m["cfg.e_loc"] = std::to_string(cfg.e_loc);
    m["cfg.layers"] = std::to_string(cfg.layers);
    m["cfg.hidden"] = std::to_string(cfg.hidden);
    m["cfg.heads"] = std::to_string(cfg.heads);
    m["cfg.ffn"] = std::to_string(cfg.ffn);
    m["cfg.dropout"] = fmt_double(cfg.dropout);
    m["cfg.post_norm"] = cfg.post_norm ? "1" : "0";
    m["cfg.experts"] = std::to_string(cfg.experts);
    m["cfg.top_k"] = std::to_string(cfg.top_k);
    m["cfg.expert_ffn"] = std::to_string(cfg.expert_ffn);
    m["cfg.moe_residual"] = cfg.moe_residual ? "1" : "0";
    m["cfg.moe_aux_weight"] = fmt_double(cfg.moe_aux_weight);
    return m;
}

ModelConfig config_from_metadata(const std::map<std::string, std::string>& meta) {
    ModelConfig cfg;
    cfg.G = meta_int(meta, "cfg.G");
    cfg.seq_len = meta_int(meta, "cfg.seq_len");
    cfg.e_day = meta_int(meta, "cfg.e_day");
    cfg.e_time = meta_int(meta, "cfg.e_time");
    cfg.e_dow = meta_int(meta, "cfg.e_dow");
    cfg.e_wk = meta_int(meta, "cfg.e_wk");
    cfg.e_loc = meta_int(meta, "cfg.e_loc");
    cfg.layers = meta_int(meta, "cfg.layers");
    cfg.hidden = meta_int(meta, "cfg.hidden");
    cfg.heads = meta_int(meta, "cfg.heads");
    cfg.ffn = meta_int(meta, "cfg.ffn");
    cfg.dropout = meta_double(meta, "cfg.dropout");
    cfg.post_norm = meta_int(meta, "cfg.post_norm") != 0;
    cfg.experts = meta_int(meta, "cfg.experts");
    cfg.top_k = meta_int(meta, "cfg.top_k");
    cfg.expert_ffn = meta_int(meta, "cfg.expert_ffn");
    cfg.moe_residual = meta_int(meta, "cfg.moe_residual") != 0;
    cfg.moe_aux_weight = meta_double(meta, "cfg.moe_aux_weight");
    cfg.validate();
    return cfg;
}

Checkpoint snapshot(const Model& model, const AdamW* opt,
                    std::map<std::string, std::string> extra) {
    Checkpoint ck;
    ck.metadata = metadata_from_config(model.cfg);
    for (auto& [k, v] : extra) ck.metadata[k] = std::move(v);
    for (auto& [name, t] : model.named_params()) ck.tensors[name] = t->detach();
    if (opt) {
        ck.metadata["opt.step"] = std::to_string(opt->step_count());
        for (auto& [name, values] : opt->moments()) {
            auto t = Tensor::from_data({static_cast<int>(values.size())}, values);
            ck.tensors["opt." + name] = t;
        }
    }
    return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
    Model m = Model::init(config_from_metadata(ck.metadata), 0);
    load_params(m, ck);
    return m;
}

void load_params(Model& model, const Checkpoint& ck) {
    std::string mismatches;
    for (auto& [name, t] : model.named_params()) {
        const auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) {
            mismatches += "  " + name + ": missing from checkpoint\n";
            continue;
        }
        if (it->second->shape != t->shape) {
            const auto dims = [](const std::vector<int>& s) {
                std::string d = "[";
                for (std::size_t i = 0; i < s.size(); ++i) {
                    if (i) d += "x";
                    d += std::to_string(s[i]);
                }
                return d + "]";
            };
            mismatches += "  " + name + ": model " + dims(t->shape) + " vs checkpoint " +
                          dims(it->second->shape) + "\n";
        }
    }
    if (!mismatches.empty()) {
        throw std::runtime_error("load_params: architecture mismatch\n" + mismatches);
    }
    for (auto& [name, t] : model.named_params()) {
        t->data = ck.tensors.at(name)->data;
        t->zero_grad();
    }
}

}  // namespace stmoe
