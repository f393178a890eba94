// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

namespace speclab::lm {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'L', 'A', 'B', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

std::string read_string(std::istream& is) {
  const uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, Transformer& model, const Vocab& vocab,
                     const std::vector<std::string>& provenance) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);

  os.write(kMagic, 8);
  write_u32(os, kVersion);

  const auto& cfg = model.config();
  write_u32(os, static_cast<uint32_t>(cfg.d_model));
  write_u32(os, static_cast<uint32_t>(cfg.n_layers));
  write_u32(os, static_cast<uint32_t>(cfg.n_heads));
  write_u32(os, static_cast<uint32_t>(cfg.d_ff));
  write_u32(os, static_cast<uint32_t>(cfg.max_context));
  write_u32(os, static_cast<uint32_t>(cfg.vocab_size));
  write_u64(os, cfg.init_seed);

  write_u32(os, static_cast<uint32_t>(vocab.codepoints().size()));
  for (char32_t cp : vocab.codepoints()) write_u32(os, static_cast<uint32_t>(cp));

  write_u32(os, static_cast<uint32_t>(provenance.size()));
  for (const auto& s : provenance) write_string(os, s);

  auto named = model.named_parameters();
  write_u32(os, static_cast<uint32_t>(named.size()));
  nlohmann::json tensor_meta = nlohmann::json::array();
  for (auto& [name, t] : named) {
    write_string(os, name);
    write_u32(os, static_cast<uint32_t>(t->shape().size()));
    for (int e : t->shape()) write_u32(os, static_cast<uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t->value().data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
    tensor_meta.push_back({{"name", name}, {"shape", t->shape()}});
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);

  nlohmann::json side = {
      {"format", "SPLABCK1"},
      {"config",
       {{"d_model", cfg.d_model},
        {"n_layers", cfg.n_layers},
        {"n_heads", cfg.n_heads},
        {"d_ff", cfg.d_ff},
        {"max_context", cfg.max_context},
        {"vocab_size", cfg.vocab_size},
        {"init_seed", cfg.init_seed}}},
      {"provenance", provenance},
      {"tensors", tensor_meta},
  };
  std::ofstream sidecar(path + ".json", std::ios::trunc);
  sidecar << side.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  if (read_u32(is) != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");

  TransformerConfig cfg;
  cfg.d_model = static_cast<int>(read_u32(is));
  cfg.n_layers = static_cast<int>(read_u32(is));
  cfg.n_heads = static_cast<int>(read_u32(is));
  cfg.d_ff = static_cast<int>(read_u32(is));
  cfg.max_context = static_cast<int>(read_u32(is));
  cfg.vocab_size = static_cast<int>(read_u32(is));
  cfg.init_seed = read_u64(is);

  const uint32_t n_cps = read_u32(is);
  std::vector<char32_t> cps(n_cps);
  for (auto& cp : cps) cp = static_cast<char32_t>(read_u32(is));

  const uint32_t n_prov = read_u32(is);
  std::vector<std::string> provenance(n_prov);
  for (auto& s : provenance) s = read_string(is);

  Checkpoint ckpt{Transformer(cfg), Vocab::from_codepoints(std::move(cps)), std::move(provenance)};

  auto named = ckpt.model.named_parameters();
  const uint32_t n_tensors = read_u32(is);
  if (n_tensors != named.size()) throw std::runtime_error("load_checkpoint: tensor count mismatch");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_string(is);
    if (name != named[i].first) {
      throw std::runtime_error("load_checkpoint: unexpected tensor '" + name + "'");
    }
    const uint32_t ndims = read_u32(is);
    std::vector<int> shape(ndims);
    for (auto& e : shape) e = static_cast<int>(read_u32(is));
    num::Tensor* t = named[i].second;
    if (shape != t->shape()) {
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
    }
    is.read(reinterpret_cast<char*>(t->value().data()),
            static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ckpt;
}

}  // namespace speclab::lm
