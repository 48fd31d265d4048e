#include "textspot/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace textspot::diff {

namespace {

constexpr char kMagic[] = "TSCKPT1\n";

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() { return "f32"; }
template <>
const char* dtype_name<double>() { return "f64"; }

template <typename T>
void write_buffer(std::ofstream& os, const std::vector<T>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename Dst, typename Src>
void read_buffer_as(std::ifstream& is, std::vector<Dst>& out, size_t n) {
  std::vector<Src> tmp(n);
  is.read(reinterpret_cast<char*>(tmp.data()),
          static_cast<std::streamsize>(n * sizeof(Src)));
  if (!is) throw CheckpointError("checkpoint: truncated buffer data");
  out.resize(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<Dst>(tmp[i]);
}

nlohmann::json read_manifest(std::ifstream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != kMagic) {
    throw CheckpointError("checkpoint: bad magic in " + path);
  }
  uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is) throw CheckpointError("checkpoint: truncated manifest length");
  std::string buf(len, '\0');
  is.read(buf.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("checkpoint: truncated manifest");
  return nlohmann::json::parse(buf);
}

}  // namespace

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path,
                     int64_t step, const nlohmann::json& meta,
                     bool save_optimizer) {
  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["dtype"] = dtype_name<T>();
  manifest["step"] = step;
  manifest["optimizer"] = save_optimizer;
  manifest["meta"] = meta;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : store.all()) {
    plist.push_back({{"name", p->name}, {"shape", p->shape}});
  }
  manifest["params"] = std::move(plist);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  const std::string mtext = manifest.dump();
  os.write(kMagic, 8);
  const uint64_t len = mtext.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& p : store.all()) write_buffer(os, p->value);
  if (save_optimizer) {
    for (const auto& p : store.all()) {
      std::vector<T> m = p->m, v = p->v;
      if (m.empty()) m.assign(p->value.size(), T(0));
      if (v.empty()) v.assign(p->value.size(), T(0));
      write_buffer(os, m);
      write_buffer(os, v);
    }
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

template <typename T>
CheckpointInfo load_checkpoint(ParameterStore<T>& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  const nlohmann::json manifest = read_manifest(is, path);

  CheckpointInfo info;
  info.step = manifest.value("step", int64_t{0});
  info.dtype = manifest.at("dtype").get<std::string>();
  info.has_optimizer = manifest.value("optimizer", false);
  if (info.dtype != "f32" && info.dtype != "f64") {
    throw CheckpointError("checkpoint: unknown dtype " + info.dtype);
  }
  const auto& plist = manifest.at("params");
  if (plist.size() != store.all().size()) {
    throw CheckpointError("checkpoint: parameter count mismatch (file has " +
                          std::to_string(plist.size()) + ", store has " +
                          std::to_string(store.all().size()) + ")");
  }
  const bool f32 = info.dtype == "f32";
  size_t i = 0;
  for (const auto& entry : plist) {
    Parameter<T>* p = store.find(entry.at("name").get<std::string>());
    if (!p) {
      throw CheckpointError("checkpoint: unknown parameter '" +
                            entry.at("name").get<std::string>() + "'");
    }
    const Shape sh = entry.at("shape").get<Shape>();
    if (sh != p->shape) {
      throw CheckpointError("checkpoint: shape mismatch for '" + p->name + "'");
    }
    // Buffers are stored in manifest order, which must match store order.
    if (store.all()[i]->name != p->name) {
      throw CheckpointError("checkpoint: parameter order mismatch at '" + p->name + "'");
    }
    if (f32) read_buffer_as<T, float>(is, p->value, p->count());
    else read_buffer_as<T, double>(is, p->value, p->count());
    ++i;
  }
  if (info.has_optimizer) {
    for (auto& p : store.all()) {
      if (f32) {
        read_buffer_as<T, float>(is, p->m, p->count());
        read_buffer_as<T, float>(is, p->v, p->count());
      } else {
        read_buffer_as<T, double>(is, p->m, p->count());
        read_buffer_as<T, double>(is, p->v, p->count());
      }
    }
  }
  return info;
}

nlohmann::json peek_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  return read_manifest(is, path);
}

template void save_checkpoint<float>(const ParameterStore<float>&, const std::string&,
                                     int64_t, const nlohmann::json&, bool);
template void save_checkpoint<double>(const ParameterStore<double>&, const std::string&,
                                      int64_t, const nlohmann::json&, bool);
template CheckpointInfo load_checkpoint<float>(ParameterStore<float>&, const std::string&);
template CheckpointInfo load_checkpoint<double>(ParameterStore<double>&, const std::string&);

}  // namespace textspot::diff
