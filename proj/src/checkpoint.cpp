#include "xmodal/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/features.hpp"

namespace xmodal {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void section(const char tag[4], const std::string& payload) {
    raw(tag, 4);
    u64(payload.size());
    out_ += payload;
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  bool done() const { return pos_ == b_.size(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }

 private:
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail(ErrorKind::load, what_ + ": truncated");
  }

  const std::string& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string table_bytes(const std::vector<NamedTensor>& table) {
  Writer w;
  w.u64(table.size());
  for (const auto& t : table) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u64(d);
    w.raw(t.value.data(), t.value.size() * sizeof(double));
  }
  return w.take();
}

std::vector<NamedTensor> read_table(Reader& r) {
  const std::uint64_t n = r.u64();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) fail(ErrorKind::load, "tensor '" + t.name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = r.f64();
    t.value = rank == 0 ? Tensor() : Tensor(std::move(shape), std::move(v));
    out.push_back(std::move(t));
  }
  return out;
}

std::string format_meta(const std::map<std::string, std::string>& m) {
  std::string s;
  for (const auto& [k, v] : m) s += k + " = " + v + "\n";
  return s;
}

}  // namespace

const Tensor* Checkpoint::find_parameter(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return &p.value;
  return nullptr;
}

std::vector<NamedTensor> snapshot_parameters(const ParameterSet& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params) out.push_back({p->name(), p->value()});
  return out;
}

void restore_parameters(ParameterSet& params, const std::vector<NamedTensor>& stored) {
  if (stored.size() != params.count()) {
    fail(ErrorKind::incompatible, "checkpoint holds " + std::to_string(stored.size()) + " tensors, model has " +
                                      std::to_string(params.count()));
  }
  for (const auto& t : stored) {
    Parameter* p = params.find(t.name);
    if (!p) fail(ErrorKind::incompatible, "checkpoint tensor '" + t.name + "' has no matching parameter");
    if (p->value().shape() != t.value.shape()) {
      fail(ErrorKind::incompatible, t.name + ": checkpoint " + shape_string(t.value.shape()) + " vs model " +
                                        shape_string(p->value().shape()));
    }
    p->assign(t.value);
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw("XMCK", 4);
  w.u32(Checkpoint::kMajor);
  w.u32(Checkpoint::kMinor);
  w.section("CONF", format_model_config(ckpt.config));
  auto meta = ckpt.metadata;
  meta["kind"] = ckpt.model_kind;
  w.section("META", format_meta(meta));
  w.section("PARM", table_bytes(ckpt.parameters));
  Writer opt;
  opt.u64(ckpt.optimizer.step);
  std::string optm = opt.take();
  optm += table_bytes(ckpt.optimizer.first_moment);
  optm += table_bytes(ckpt.optimizer.second_moment);
  w.section("OPTM", optm);
  w.section("RNGS", ckpt.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes, "checkpoint");
  if (r.bytes(4) != "XMCK") fail(ErrorKind::load, "not a checkpoint (missing XMCK magic)");
  const std::uint32_t major = r.u32();
  r.u32();  // minor: any value is readable within a major version
  if (major != Checkpoint::kMajor) {
    fail(ErrorKind::load, "checkpoint format " + std::to_string(major) + ".x is not supported (expected " +
                              std::to_string(Checkpoint::kMajor) + ".x)");
  }
  Checkpoint c;
  bool have_conf = false, have_parm = false;
  while (!r.done()) {
    const std::string tag = r.bytes(4);
    const std::uint64_t len = r.u64();
    const std::string payload = r.bytes(len);
    if (tag == "CONF") {
      c.config = parse_model_config(payload);
      have_conf = true;
    } else if (tag == "META") {
      for (auto& [k, v] : parse_key_values(payload, "checkpoint metadata")) c.metadata[k] = v;
      if (auto it = c.metadata.find("kind"); it != c.metadata.end()) {
        c.model_kind = it->second;
        c.metadata.erase(it);
      }
    } else if (tag == "PARM") {
      Reader pr(payload, "checkpoint parameters");
      c.parameters = read_table(pr);
      have_parm = true;
    } else if (tag == "OPTM") {
      Reader orr(payload, "checkpoint optimizer state");
      c.optimizer.step = orr.u64();
      c.optimizer.first_moment = read_table(orr);
      c.optimizer.second_moment = read_table(orr);
    } else if (tag == "RNGS") {
      c.rng_state = payload;
    }
  }
  if (!have_conf || !have_parm) fail(ErrorKind::load, "checkpoint lacks a CONF or PARM section");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorKind::io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::load, "cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

std::vector<std::string> architecture_differences(const JointEncoderConfig& stored, const JointEncoderConfig& wanted) {
  std::vector<std::string> out;
  auto cmp = [&](const char* key, auto a, auto b) {
    if (a != b) {
      std::ostringstream os;
      os << key << ": " << a << " vs " << b;
      out.push_back(os.str());
    }
  };
  const auto& s = stored.attention;
  const auto& w = wanted.attention;
  cmp("model.d_model", s.model_dim, w.model_dim);
  cmp("model.heads", s.heads, w.heads);
  cmp("model.ff_dim", s.ff_dim, w.ff_dim);
  cmp("model.encoder_layers", s.encoder_layers, w.encoder_layers);
  cmp("model.crossmodal_layers", s.crossmodal_layers, w.crossmodal_layers);
  cmp("model.layer_norm_eps", s.layer_norm_eps, w.layer_norm_eps);
  cmp("model.lfbe_dim", stored.lfbe_dim, wanted.lfbe_dim);
  cmp("model.stack_size", stored.stack_size, wanted.stack_size);
  cmp("model.video_dim", stored.video_dim, wanted.video_dim);
  cmp("model.text_dim", stored.text_dim, wanted.text_dim);
  return out;
}

}  // namespace xmodal
