#include "mtgnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mtgnn/errors.hpp"

namespace mtgnn {

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  void blob(const NamedTensor& t) {
    u32(static_cast<std::uint32_t>(t.name.size()));
    bytes(t.name);
    u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto e : t.tensor.shape()) u64(e);
    for (double v : t.tensor.data()) f64(v);
  }

 private:
  void put_le(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  std::string bytes(std::uint64_t n) {
    if (n > (1u << 30)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated file");
    return s;
  }

  NamedTensor blob() {
    NamedTensor t;
    t.name = bytes(u32());
    const std::uint32_t rank = u32();
    if (rank > 8) fail("tensor '" + t.name + "' has implausible rank");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      e = u64();
      if (e == 0 || e > (1ull << 32)) fail("tensor '" + t.name + "' has invalid extent");
      numel *= e;
      if (numel > (1ull << 31)) fail("tensor '" + t.name + "' is implausibly large");
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = f64();
    t.tensor = Tensor(std::move(shape), std::move(values));
    return t;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw CheckpointError("checkpoint " + path_ + ": " + why);
  }

 private:
  std::uint64_t get_le(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    if (!in_) fail("truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
  std::string path_;
};

const Tensor* find_in(const ParameterList& list, const std::string& name) {
  for (const auto& p : list)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

}  // namespace

const Tensor* Checkpoint::find_parameter(const std::string& name) const {
  return find_in(parameters, name);
}

const Tensor* Checkpoint::find_buffer(const std::string& name) const {
  return find_in(buffers, name);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  Writer w(out);
  w.bytes(std::string(kCheckpointMagic, 6));
  w.u32(kCheckpointVersion);
  const std::string text = checkpoint.config.to_text();
  w.u64(text.size());
  w.bytes(text);
  w.u64(checkpoint.parameters.size());
  for (const auto& p : checkpoint.parameters) w.blob(p);
  w.u64(checkpoint.buffers.size());
  for (const auto& b : checkpoint.buffers) w.blob(b);
  out.flush();
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  if (r.bytes(6) != std::string(kCheckpointMagic, 6)) r.fail("bad magic, not an MTGNN checkpoint");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    r.fail("unsupported version " + std::to_string(v));
  Checkpoint ck;
  try {
    ck.config = RunConfig::from_text(r.bytes(r.u64()));
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid embedded config: ") + e.what());
  }
  const std::uint64_t np = r.u64();
  if (np > 100000) r.fail("implausible parameter count");
  for (std::uint64_t i = 0; i < np; ++i) ck.parameters.push_back(r.blob());
  const std::uint64_t nb = r.u64();
  if (nb > 100000) r.fail("implausible buffer count");
  for (std::uint64_t i = 0; i < nb; ++i) ck.buffers.push_back(r.blob());
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after last blob");
  return ck;
}

Checkpoint make_checkpoint(const RunConfig& config, const MtgnnModel& model, ParameterList buffers) {
  Checkpoint ck;
  ck.config = config;
  for (const auto& p : model.parameters()) ck.parameters.push_back({p.name, p.tensor.detach()});
  for (auto& b : buffers) ck.buffers.push_back({b.name, b.tensor.detach()});
  return ck;
}

void load_parameters(MtgnnModel& model, const ParameterList& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& v : values) by_name[v.name] = &v.tensor;
  for (auto& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw CheckpointError("parameter '" + p.name + "' has shape " +
                            shape_str(it->second->shape()) + ", model expects " +
                            shape_str(p.tensor.shape()));
    auto src = it->second->data();
    auto dst = p.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw CheckpointError("checkpoint has unknown parameter '" + by_name.begin()->first + "'");
}

std::unique_ptr<MtgnnModel> restore_model(const Checkpoint& checkpoint) {
  std::unique_ptr<MtgnnModel> model;
  try {
    std::mt19937_64 rng(checkpoint.config.train.seed);
    model = std::make_unique<MtgnnModel>(checkpoint.config.model, rng);
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint config does not describe a valid model: ") +
                          e.what());
  }
  if (auto* g = model->graph_learner()) {
    if (!checkpoint.config.static_features.empty()) {
      const Tensor* z = checkpoint.find_parameter("graph.E1");
      if (!z) throw CheckpointError("checkpoint lacks static features graph.E1");
      g->set_static_features(*z);
    }
    if (checkpoint.config.model.graph_mode == GraphMode::predefined) {
      const Tensor* a = checkpoint.find_parameter("graph.predefined");
      if (!a) throw CheckpointError("checkpoint lacks graph.predefined");
      g->set_predefined(*a);
    }
  }
  load_parameters(*model, checkpoint.parameters);
  return model;
}

}  // namespace mtgnn
