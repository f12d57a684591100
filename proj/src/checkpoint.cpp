#include "drtl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "drtl/error.hpp"

namespace drtl {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "drtl-checkpoint 1";

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

struct ArrayEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

}  // namespace

void save_checkpoint(const fs::path& path, const Model& model, const TrainConfig& config, const Mat4& omega,
                     std::size_t epoch, double dev_metric) {
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  Tensor omega_t({4, 4}, 0.0);
  std::copy(omega.a.begin(), omega.a.end(), omega_t.values().begin());
  arrays.emplace_back("omega", &omega_t);
  for (const Parameter* p : model.store().all()) arrays.emplace_back(p->name, &p->value);

  std::ostringstream head;
  char buf[48];
  head << kMagic << '\n';
  std::istringstream cfg(config.to_key_values());
  for (std::string line; std::getline(cfg, line);) head << "config " << line << '\n';
  head << "epoch " << epoch << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", dev_metric);
  head << "dev_metric " << buf << '\n';
  head << "vocab " << model.vocab().size() << '\n';
  for (const std::string& tok : model.vocab().tokens()) head << tok << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : arrays) {
    head << "array " << name << " f64 " << dims(t->shape()) << ' ' << offset << ' ' << t->size() << '\n';
    offset += t->size();
  }
  head << "end\n";

  std::string payload;
  payload.reserve(offset * 8);
  for (const auto& [name, t] : arrays)
    for (double v : t->values()) put_f64(payload, v);

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw DataError("write failed for checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string();
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError(where + ": not a checkpoint (bad header)");

  std::string config_text;
  std::size_t epoch = 0;
  double dev_metric = 0.0;
  EmbeddingTable table;
  std::vector<ArrayEntry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      config_text += line.substr(7) + '\n';
    } else if (kind == "epoch") {
      ls >> epoch;
    } else if (kind == "dev_metric") {
      std::string v;
      ls >> v;
      dev_metric = std::strtod(v.c_str(), nullptr);
    } else if (kind == "vocab") {
      std::size_t n = 0;
      ls >> n;
      std::vector<std::string> tokens(n);
      for (auto& t : tokens) {
        if (!std::getline(in, t)) throw DataError(where + ": truncated vocabulary");
      }
      if (n < 2 || tokens[0] != Vocabulary::pad_token || tokens[1] != Vocabulary::unk_token) {
        throw DataError(where + ": vocabulary must start with the PAD and UNK tokens");
      }
      for (std::size_t i = 2; i < n; ++i) table.vocab.add(tokens[i]);
      if (table.vocab.size() != n) throw DataError(where + ": duplicate vocabulary tokens");
    } else if (kind == "array") {
      ArrayEntry e;
      std::string dtype, shape;
      ls >> e.name >> dtype >> shape >> e.offset >> e.count;
      if (!ls || dtype != "f64") throw DataError(where + ": malformed array line '" + line + "'");
      std::istringstream ss(shape);
      for (std::string d; std::getline(ss, d, ',');) e.shape.push_back(std::stoul(d));
      if (shape_size(e.shape) != e.count) throw DataError(where + ": array '" + e.name + "' count does not match its shape");
      entries.push_back(std::move(e));
    } else {
      throw DataError(where + ": unknown manifest field '" + kind + "'");
    }
  }
  if (!ended) throw DataError(where + ": truncated manifest");

  std::size_t total = 0;
  for (const ArrayEntry& e : entries) total = std::max(total, e.offset + e.count);
  std::vector<unsigned char> payload(total * 8);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw DataError(where + ": truncated, expected " + std::to_string(payload.size()) + " bytes of array data, found " +
                    std::to_string(in.gcount()));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(where + ": trailing bytes after array data");

  TrainConfig config;
  try {
    config = TrainConfig::from_key_values(parse_key_values(config_text));
  } catch (const ConfigError& e) {
    throw DataError(where + ": config echo: " + e.what());
  }
  table.matrix = Tensor({table.vocab.size(), config.model.hcnn.embedding_dim});

  LoadedCheckpoint out{Model(config.model, table, 0), config, {}, epoch, dev_metric};
  std::vector<bool> filled;
  auto params = out.model.store().all();
  filled.assign(params.size(), false);
  bool have_omega = false;
  for (const ArrayEntry& e : entries) {
    Tensor* dest = nullptr;
    Tensor omega_t;
    if (e.name == "omega") {
      omega_t = Tensor({4, 4});
      dest = &omega_t;
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name == e.name) {
          dest = &params[i]->value;
          filled[i] = true;
        }
      }
    }
    if (!dest) throw DataError(where + ": array '" + e.name + "' does not belong to a " +
                               std::string(variant_name(config.model.variant)) + " model");
    if (dest->shape() != e.shape) {
      throw DataError(where + ": array '" + e.name + "' has shape " + shape_string(e.shape) + ", config implies " +
                      shape_string(dest->shape()));
    }
    for (std::size_t i = 0; i < e.count; ++i) (*dest)[i] = get_f64(payload.data() + (e.offset + i) * 8);
    if (e.name == "omega") {
      std::copy(omega_t.values().begin(), omega_t.values().end(), out.omega.a.begin());
      have_omega = true;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!filled[i]) throw DataError(where + ": missing array '" + params[i]->name + "'");
  }
  if (!have_omega) throw DataError(where + ": missing array 'omega'");
  return out;
}

}  // namespace drtl
