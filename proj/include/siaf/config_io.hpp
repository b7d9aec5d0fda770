// SPDX-License-Identifier: Apache-2.0
//
// Model config text format, weight binding and raw image files.
//
//   siaf-model 1
//   model time_steps=4 in_channels=3 height=8 width=8
//   conv3x3 name=tok.conv0 in=3 out=2 stride=1
//   lif name=tok.lif0 threshold=8192 leak_shift=2
//   maxpool name=tok.pool1
//   block
//   residual name=blk0.attn
//   ssa name=blk0.attn.ssa dim=16 heads=2 scale_shift=3 lif_q=32:2 lif_k=32:2 lif_v=32:2 lif_attn=1:2 lif_proj=32:2
//   end
//   residual name=blk0.mlp
//   linear name=blk0.mlp.fc1 in=16 out=64
//   ...
//   end
//   head name=head classes=10 dim=16
//   energy spike_op=0.05 offchip_word=100 weight.read=0.125 weight.write=0.15
//
// Layers before the first `block` form the tokenizer. Every `block` is
// followed by two residuals: attention, then MLP. Blank lines and text after
// '#' are ignored. Weights live in a tensor file under "<layer>.weight" and
// "<layer>.bias" ("<ssa>.w_q", "<ssa>.b_q", ... for attention).
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "siaf/error.hpp"
#include "siaf/memory.hpp"
#include "siaf/model.hpp"
#include "siaf/tensor_file.hpp"

namespace siaf {

inline constexpr const char* kConfigMagic = "siaf-model";
inline constexpr int kConfigVersion = 1;

struct LoadedConfig {
  ModelConfig model;
  std::optional<EnergyModel> energy;
};

namespace detail {

struct ConfigLine {
  std::size_t number = 0;
  std::string keyword;
  std::map<std::string, std::string> fields;
};

class ConfigReader {
 public:
  ConfigReader(const std::string& text, std::string source) : source_(std::move(source)) {
    std::istringstream in(text);
    std::string raw;
    std::size_t n = 0;
    while (std::getline(in, raw)) {
      ++n;
      if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
      std::istringstream words(raw);
      ConfigLine line;
      line.number = n;
      if (!(words >> line.keyword)) continue;
      std::string w;
      while (words >> w) {
        const auto eq = w.find('=');
        if (eq == std::string::npos || eq == 0) {
          if (line.keyword == kConfigMagic && line.fields.empty()) {
            line.fields["version"] = w;
            continue;
          }
          fail(n, "expected key=value, got '" + w + "'");
        }
        if (!line.fields.emplace(w.substr(0, eq), w.substr(eq + 1)).second) fail(n, "duplicate key '" + w.substr(0, eq) + "'");
      }
      lines_.push_back(std::move(line));
    }
    last_line_ = n;
  }

  [[noreturn]] void fail(std::size_t line, const std::string& what) const { throw ParseError(source_, line, what); }

  bool done() const { return pos_ == lines_.size(); }
  const ConfigLine& peek() const {
    if (done()) fail(last_line_, "unexpected end of file");
    return lines_[pos_];
  }
  const ConfigLine& next() {
    const ConfigLine& l = peek();
    ++pos_;
    return l;
  }

  std::string str(const ConfigLine& l, const std::string& key) const {
    const auto it = l.fields.find(key);
    if (it == l.fields.end()) fail(l.number, l.keyword + ": missing '" + key + "'");
    return it->second;
  }

  template <class T>
  T num(const ConfigLine& l, const std::string& key) const {
    const std::string s = str(l, key);
    T v{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) fail(l.number, l.keyword + ": bad value for '" + key + "': '" + s + "'");
    return v;
  }

  template <class T>
  T num_or(const ConfigLine& l, const std::string& key, T fallback) const {
    return l.fields.count(key) ? num<T>(l, key) : fallback;
  }

  LifParams lif_pair(const ConfigLine& l, const std::string& key) const {
    const std::string s = str(l, key);
    const auto colon = s.find(':');
    if (colon == std::string::npos) fail(l.number, key + ": expected threshold:leak_shift");
    ConfigLine sub{l.number, l.keyword + " " + key, {{"t", s.substr(0, colon)}, {"s", s.substr(colon + 1)}}};
    return LifParams{num<std::int32_t>(sub, "t"), num<std::uint32_t>(sub, "s")};
  }

  void expect_only(const ConfigLine& l, std::initializer_list<const char*> keys) const {
    for (const auto& [k, _] : l.fields) {
      bool ok = false;
      for (const char* allowed : keys) ok = ok || k == allowed;
      if (!ok) fail(l.number, l.keyword + ": unknown key '" + k + "'");
    }
  }

 private:
  std::string source_;
  std::vector<ConfigLine> lines_;
  std::size_t pos_ = 0;
  std::size_t last_line_ = 0;
};

inline LayerSpec parse_layer(ConfigReader& r);

inline IandResidual parse_residual(ConfigReader& r) {
  const ConfigLine& head = r.next();
  if (head.keyword != "residual") r.fail(head.number, "expected 'residual', got '" + head.keyword + "'");
  r.expect_only(head, {"name"});
  IandResidual res{r.str(head, "name"), {}};
  while (r.peek().keyword != "end") res.inner.push_back(parse_layer(r));
  r.next();
  return res;
}

inline LayerSpec parse_layer(ConfigReader& r) {
  const ConfigLine& l = r.peek();
  const std::string& k = l.keyword;
  if (k == "residual") return LayerSpec{parse_residual(r)};
  r.next();
  if (k == "conv3x3") {
    r.expect_only(l, {"name", "in", "out", "stride"});
    return LayerSpec{ConvBn3x3{r.str(l, "name"), r.num<std::uint32_t>(l, "in"), r.num<std::uint32_t>(l, "out"),
                               r.num_or<std::uint32_t>(l, "stride", 1), {}, {}}};
  }
  if (k == "conv1x1") {
    r.expect_only(l, {"name", "in", "out"});
    return LayerSpec{ConvBn1x1{r.str(l, "name"), r.num<std::uint32_t>(l, "in"), r.num<std::uint32_t>(l, "out"), {}, {}}};
  }
  if (k == "linear") {
    r.expect_only(l, {"name", "in", "out"});
    return LayerSpec{Linear{r.str(l, "name"), r.num<std::uint32_t>(l, "in"), r.num<std::uint32_t>(l, "out"), {}, {}}};
  }
  if (k == "lif") {
    r.expect_only(l, {"name", "threshold", "leak_shift"});
    return LayerSpec{Lif{r.str(l, "name"), LifParams{r.num<std::int32_t>(l, "threshold"), r.num<std::uint32_t>(l, "leak_shift")}}};
  }
  if (k == "maxpool") {
    r.expect_only(l, {"name"});
    return LayerSpec{MaxPool2x2{r.str(l, "name")}};
  }
  if (k == "ssa") {
    r.expect_only(l, {"name", "dim", "heads", "scale_shift", "lif_q", "lif_k", "lif_v", "lif_attn", "lif_proj"});
    Ssa s;
    s.name = r.str(l, "name");
    s.dim = r.num<std::uint32_t>(l, "dim");
    s.heads = r.num<std::uint32_t>(l, "heads");
    s.scale_shift = r.num_or<std::uint32_t>(l, "scale_shift", 3);
    s.lif_q = r.lif_pair(l, "lif_q");
    s.lif_k = r.lif_pair(l, "lif_k");
    s.lif_v = r.lif_pair(l, "lif_v");
    s.lif_attn = r.lif_pair(l, "lif_attn");
    s.lif_proj = r.lif_pair(l, "lif_proj");
    return LayerSpec{std::move(s)};
  }
  r.fail(l.number, "unknown layer kind '" + k + "'");
}

inline EnergyModel parse_energy(ConfigReader& r, const ConfigLine& l) {
  EnergyModel m = default_energy_model(default_budget());
  for (const auto& [key, _] : l.fields) {
    if (key == "spike_op") {
      m.spike_op_pj = r.num<double>(l, key);
    } else if (key == "offchip_word") {
      m.offchip_word_pj = r.num<double>(l, key);
    } else if (key == "offchip_word_bits") {
      m.offchip_word_bits = r.num<std::uint32_t>(l, key);
    } else if (const auto dot = key.find('.'); dot != std::string::npos && m.banks.count(key.substr(0, dot))) {
      auto& e = m.banks[key.substr(0, dot)];
      const std::string what = key.substr(dot + 1);
      if (what == "read") {
        e.read_pj = r.num<double>(l, key);
      } else if (what == "write") {
        e.write_pj = r.num<double>(l, key);
      } else {
        r.fail(l.number, "energy: unknown key '" + key + "'");
      }
    } else {
      r.fail(l.number, "energy: unknown key '" + key + "'");
    }
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    r.fail(l.number, e.what());
  }
  return m;
}

}  // namespace detail

/// Parses the layer structure. Tensors are left empty; see bind_weights.
inline LoadedConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  detail::ConfigReader r(text, source);
  const auto& magic = r.next();
  if (magic.keyword != kConfigMagic) r.fail(magic.number, std::string("expected '") + kConfigMagic + " 1' header");
  if (r.num<int>(magic, "version") != kConfigVersion) r.fail(magic.number, "unsupported config version");

  LoadedConfig out;
  const auto& m = r.next();
  if (m.keyword != "model") r.fail(m.number, "expected 'model' line");
  r.expect_only(m, {"time_steps", "in_channels", "height", "width"});
  out.model.time_steps = r.num<std::uint32_t>(m, "time_steps");
  out.model.in_channels = r.num<std::uint32_t>(m, "in_channels");
  out.model.in_height = r.num<std::uint32_t>(m, "height");
  out.model.in_width = r.num<std::uint32_t>(m, "width");

  bool have_head = false;
  while (!r.done()) {
    const auto& l = r.peek();
    if (l.keyword == "block") {
      r.next();
      r.expect_only(l, {});
      Block b;
      b.attention = detail::parse_residual(r);
      b.mlp = detail::parse_residual(r);
      out.model.blocks.push_back(std::move(b));
    } else if (l.keyword == "head") {
      r.next();
      r.expect_only(l, {"name", "classes", "dim"});
      out.model.head.name = r.str(l, "name");
      out.model.head.classes = r.num<std::uint32_t>(l, "classes");
      out.model.head.dim = r.num<std::uint32_t>(l, "dim");
      have_head = true;
    } else if (l.keyword == "energy") {
      r.next();
      out.energy = detail::parse_energy(r, l);
    } else if (l.keyword == "end") {
      r.fail(l.number, "'end' without 'residual'");
    } else {
      if (!out.model.blocks.empty() || have_head) r.fail(l.number, "tokenizer layers must come before the first block");
      out.model.tokenizer.push_back(detail::parse_layer(r));
    }
  }
  if (!have_head) r.fail(0, "missing 'head' line");
  return out;
}

namespace detail {

inline void write_layer(std::ostream& os, const LayerSpec& layer) {
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        auto lif = [](const LifParams& p) { return std::to_string(p.threshold) + ":" + std::to_string(p.leak_shift); };
        if constexpr (std::is_same_v<T, ConvBn3x3>) {
          os << "conv3x3 name=" << l.name << " in=" << l.in_ch << " out=" << l.out_ch << " stride=" << l.stride << "\n";
        } else if constexpr (std::is_same_v<T, ConvBn1x1>) {
          os << "conv1x1 name=" << l.name << " in=" << l.in_ch << " out=" << l.out_ch << "\n";
        } else if constexpr (std::is_same_v<T, Linear>) {
          os << "linear name=" << l.name << " in=" << l.in_dim << " out=" << l.out_dim << "\n";
        } else if constexpr (std::is_same_v<T, MaxPool2x2>) {
          os << "maxpool name=" << l.name << "\n";
        } else if constexpr (std::is_same_v<T, Lif>) {
          os << "lif name=" << l.name << " threshold=" << l.params.threshold << " leak_shift=" << l.params.leak_shift << "\n";
        } else if constexpr (std::is_same_v<T, IandResidual>) {
          os << "residual name=" << l.name << "\n";
          for (const auto& inner : l.inner) write_layer(os, inner);
          os << "end\n";
        } else if constexpr (std::is_same_v<T, Ssa>) {
          os << "ssa name=" << l.name << " dim=" << l.dim << " heads=" << l.heads << " scale_shift=" << l.scale_shift
             << " lif_q=" << lif(l.lif_q) << " lif_k=" << lif(l.lif_k) << " lif_v=" << lif(l.lif_v)
             << " lif_attn=" << lif(l.lif_attn) << " lif_proj=" << lif(l.lif_proj) << "\n";
        }
      },
      layer.op);
}

}  // namespace detail

inline std::string write_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << kConfigMagic << " " << kConfigVersion << "\n";
  os << "model time_steps=" << cfg.time_steps << " in_channels=" << cfg.in_channels << " height=" << cfg.in_height
     << " width=" << cfg.in_width << "\n";
  for (const auto& l : cfg.tokenizer) detail::write_layer(os, l);
  for (const auto& b : cfg.blocks) {
    os << "block\n";
    detail::write_layer(os, LayerSpec{b.attention});
    detail::write_layer(os, LayerSpec{b.mlp});
  }
  os << "head name=" << cfg.head.name << " classes=" << cfg.head.classes << " dim=" << cfg.head.dim << "\n";
  return os.str();
}

namespace detail {

/// Visits every (tensor name, weight slot, bias slot) pair in the model.
template <class Model, class F>
void for_each_param(Model& cfg, F&& f) {
  auto layer = [&](auto& self, auto& spec) -> void {
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvBn3x3> || std::is_same_v<T, ConvBn1x1> || std::is_same_v<T, Linear>) {
            f(l.name + ".weight", l.name + ".bias", l.weights, l.bias);
          } else if constexpr (std::is_same_v<T, IandResidual>) {
            for (auto& inner : l.inner) self(self, inner);
          } else if constexpr (std::is_same_v<T, Ssa>) {
            f(l.name + ".w_q", l.name + ".b_q", l.w_q, l.b_q);
            f(l.name + ".w_k", l.name + ".b_k", l.w_k, l.b_k);
            f(l.name + ".w_v", l.name + ".b_v", l.w_v, l.b_v);
            f(l.name + ".w_proj", l.name + ".b_proj", l.w_proj, l.b_proj);
          }
        },
        spec.op);
  };
  for (auto& l : cfg.tokenizer) layer(layer, l);
  for (auto& b : cfg.blocks) {
    for (auto& l : b.attention.inner) layer(layer, l);
    for (auto& l : b.mlp.inner) layer(layer, l);
  }
  f(cfg.head.name + ".weight", cfg.head.name + ".bias", cfg.head.weights, cfg.head.bias);
}

}  // namespace detail

inline TensorFile weights_file(const ModelConfig& cfg) {
  TensorFile f;
  detail::for_each_param(cfg, [&](const std::string& wn, const std::string& bn, const QTensor& w, const AccTensor& b) {
    f.put(wn, w);
    f.put(bn, b);
  });
  return f;
}

/// Copies tensors from `file` into the model and validates the result.
inline void bind_weights(ModelConfig& cfg, const TensorFile& file) {
  std::size_t used = 0;
  detail::for_each_param(cfg, [&](const std::string& wn, const std::string& bn, QTensor& w, AccTensor& b) {
    for (const auto* n : {&wn, &bn}) {
      if (!file.contains(*n)) throw ConfigError("weight file has no tensor '" + *n + "'");
    }
    try {
      w = file.get<QTensor>(wn);
      b = file.get<AccTensor>(bn);
    } catch (const Error& e) {
      throw ConfigError(std::string("weight file: ") + e.what());
    }
    used += 2;
  });
  if (used != file.size()) throw ConfigError("weight file has " + std::to_string(file.size() - used) + " unused tensors");
  validate(cfg);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline LoadedConfig load_model(const std::string& config_path, const std::string& weights_path) {
  LoadedConfig c = parse_config(read_text_file(config_path), config_path);
  bind_weights(c.model, TensorFile::load(weights_path));
  return c;
}

inline void save_model(const ModelConfig& cfg, const std::string& config_path, const std::string& weights_path) {
  std::ofstream out(config_path, std::ios::binary);
  if (!out) throw ParseError(config_path, 0, "cannot open file for writing");
  out << write_config(cfg);
  if (!out) throw ParseError(config_path, 0, "write failed");
  weights_file(cfg).save(weights_path);
}

// Raw image: u32 LE width, height, channels, then CHW bytes.

inline std::vector<std::uint8_t> serialize_image(const ByteImage& img) {
  detail::ByteWriter w;
  w.le<std::uint32_t>(img.width());
  w.le<std::uint32_t>(img.height());
  w.le<std::uint32_t>(img.channels());
  w.raw(img.data().data(), img.data().size());
  return w.take();
}

inline ByteImage parse_image(const std::vector<std::uint8_t>& bytes, const std::string& source = "<image>") {
  detail::ByteReader r(bytes, source);
  const auto w = r.le<std::uint32_t>("width");
  const auto h = r.le<std::uint32_t>("height");
  const auto c = r.le<std::uint32_t>("channels");
  if (w == 0 || h == 0 || c == 0) r.fail(0, "image dimensions must be positive");
  const std::uint64_t n = std::uint64_t{w} * h * c;
  if (n > bytes.size() - 12) r.fail(12, "pixel data truncated: need " + std::to_string(n) + " bytes");
  const std::uint8_t* p = r.raw(n, "pixels");
  if (!r.done()) r.fail(r.pos(), "trailing bytes after pixel data");
  return ByteImage(c, h, w, std::vector<std::uint8_t>(p, p + n));
}

inline ByteImage load_image(const std::string& path) {
  const std::string s = read_text_file(path);
  return parse_image(std::vector<std::uint8_t>(s.begin(), s.end()), path);
}

inline void save_image(const ByteImage& img, const std::string& path) {
  const auto bytes = serialize_image(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, 0, "cannot open file for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(path, 0, "write failed");
}

}  // namespace siaf
