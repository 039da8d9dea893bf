#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "factforge/errors.hpp"
#include "factforge/model.hpp"
#include "factforge/train.hpp"

namespace factforge {

// Adapter files are a small JSON tensor container: a header with dtype and
// the originating config, plus named tensors with explicit shapes. Floats
// round-trip exactly through JSON (shortest-repr doubles), so saved adapters
// reload bit-identically.

using json = nlohmann::json;

namespace detail {

template <typename Real>
const char* dtype_name() {
    if constexpr (sizeof(Real) == 4) return "f32";
    else return "f64";
}

template <typename Real>
json tensor_to_json(const std::vector<Real>& data, std::vector<int> shape) {
    size_t expect = 1;
    for (int s : shape) expect *= static_cast<size_t>(s);
    if (expect != data.size()) throw ConfigError("tensor shape/size mismatch on save");
    json j;
    j["shape"] = shape;
    j["data"] = json::array();
    for (Real x : data) j["data"].push_back(static_cast<double>(x));
    return j;
}

template <typename Real>
std::vector<Real> tensor_from_json(const json& j, const std::vector<int>& shape) {
    size_t expect = 1;
    for (int s : shape) expect *= static_cast<size_t>(s);
    auto got_shape = j.at("shape").get<std::vector<int>>();
    if (got_shape != shape) throw ConfigError("tensor shape mismatch on load");
    std::vector<Real> out;
    out.reserve(expect);
    for (const auto& v : j.at("data")) out.push_back(static_cast<Real>(v.get<double>()));
    if (out.size() != expect) throw ConfigError("tensor size mismatch on load");
    return out;
}

} // namespace detail

inline json model_config_to_json(const ModelConfig& mc) {
    return {{"vocab_size", mc.vocab_size}, {"hidden_dim", mc.hidden_dim},
            {"num_layers", mc.num_layers}, {"num_heads", mc.num_heads},
            {"ffn_dim", mc.ffn_dim},       {"max_seq_len", mc.max_seq_len},
            {"seed", mc.seed}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig mc;
    mc.vocab_size = j.at("vocab_size").get<int>();
    mc.hidden_dim = j.at("hidden_dim").get<int>();
    mc.num_layers = j.at("num_layers").get<int>();
    mc.num_heads = j.at("num_heads").get<int>();
    mc.ffn_dim = j.at("ffn_dim").get<int>();
    mc.max_seq_len = j.at("max_seq_len").get<int>();
    mc.seed = j.at("seed").get<uint64_t>();
    mc.validate();
    return mc;
}

template <typename Real>
json prefix_to_json(const PrefixParams<Real>& p, const ModelConfig& mc) {
    json j;
    j["format"] = "factforge-adapter-v1";
    j["kind"] = "prefix";
    j["dtype"] = detail::dtype_name<Real>();
    j["model"] = model_config_to_json(mc);
    j["prefix"] = {{"n", p.n}, {"d", p.d}};
    j["tensors"]["keys"] = detail::tensor_to_json(p.keys, {p.d, p.n, p.h});
    j["tensors"]["values"] = detail::tensor_to_json(p.values, {p.d, p.n, p.h});
    return j;
}

template <typename Real>
PrefixParams<Real> prefix_from_json(const json& j, const ModelConfig& mc) {
    if (j.value("kind", "") != "prefix") throw ConfigError("not a prefix adapter file");
    PrefixConfig pc{j.at("prefix").at("n").get<int>(), j.at("prefix").at("d").get<int>()};
    PrefixParams<Real> p = PrefixParams<Real>::zeros(mc, pc);
    p.keys = detail::tensor_from_json<Real>(j.at("tensors").at("keys"), {p.d, p.n, p.h});
    p.values =
        detail::tensor_from_json<Real>(j.at("tensors").at("values"), {p.d, p.n, p.h});
    return p;
}

template <typename Real>
json lora_to_json(const LoraParams<Real>& p, const ModelConfig& mc) {
    json j;
    j["format"] = "factforge-adapter-v1";
    j["kind"] = "lora";
    j["dtype"] = detail::dtype_name<Real>();
    j["model"] = model_config_to_json(mc);
    j["lora"] = {{"rank", p.cfg.rank},
                 {"alpha", p.cfg.alpha},
                 {"target_query", p.cfg.target_query},
                 {"target_value", p.cfg.target_value}};
    const int L = p.layers, r = p.cfg.rank, h = p.h;
    if (p.cfg.target_query) {
        j["tensors"]["a_q"] = detail::tensor_to_json(p.a_q, {L, r, h});
        j["tensors"]["b_q"] = detail::tensor_to_json(p.b_q, {L, h, r});
    }
    if (p.cfg.target_value) {
        j["tensors"]["a_v"] = detail::tensor_to_json(p.a_v, {L, r, h});
        j["tensors"]["b_v"] = detail::tensor_to_json(p.b_v, {L, h, r});
    }
    return j;
}

template <typename Real>
LoraParams<Real> lora_from_json(const json& j, const ModelConfig& mc) {
    if (j.value("kind", "") != "lora") throw ConfigError("not a lora adapter file");
    LoraConfig lc;
    lc.rank = j.at("lora").at("rank").get<int>();
    lc.alpha = j.at("lora").at("alpha").get<double>();
    lc.target_query = j.at("lora").at("target_query").get<bool>();
    lc.target_value = j.at("lora").at("target_value").get<bool>();
    LoraParams<Real> p = LoraParams<Real>::zeros(mc, lc);
    const int L = p.layers, r = lc.rank, h = p.h;
    if (lc.target_query) {
        p.a_q = detail::tensor_from_json<Real>(j.at("tensors").at("a_q"), {L, r, h});
        p.b_q = detail::tensor_from_json<Real>(j.at("tensors").at("b_q"), {L, h, r});
    }
    if (lc.target_value) {
        p.a_v = detail::tensor_from_json<Real>(j.at("tensors").at("a_v"), {L, r, h});
        p.b_v = detail::tensor_from_json<Real>(j.at("tensors").at("b_v"), {L, h, r});
    }
    return p;
}

inline json trace_to_json(const TrainTrace& t) {
    json changes = json::array();
    for (const auto& [epoch, lr] : t.lr_changes) {
        changes.push_back({{"epoch", epoch}, {"lr", lr}});
    }
    return {{"epoch_loss", t.epoch_loss},
            {"lr_changes", changes},
            {"final_loss", t.final_loss},
            {"epochs_run", t.epochs_run}};
}

inline TrainTrace trace_from_json(const json& j) {
    TrainTrace t;
    t.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    for (const auto& c : j.at("lr_changes")) {
        t.lr_changes.emplace_back(c.at("epoch").get<int>(), c.at("lr").get<double>());
    }
    t.final_loss = j.at("final_loss").get<double>();
    t.epochs_run = j.at("epochs_run").get<int>();
    return t;
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed JSON in " + path);
    return j;
}

} // namespace factforge
