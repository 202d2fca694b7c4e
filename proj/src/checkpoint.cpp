#include "kilnnet/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"

namespace kiln {

namespace {

// Integers and doubles are written little-endian byte by byte so the file
// does not depend on the host byte order.
class Writer {
 public:
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view in, const std::string& origin) : in_(in), origin_(origin) {}

  std::string_view take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      fail(ErrorKind::decode, origin_ + ": truncated while reading " + what + " at byte " +
                                  std::to_string(pos_));
    }
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(take(1, what)[0]); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(le(8, what)); }
  std::string str(const char* what) {
    const auto n = u32(what);
    return std::string(take(n, what));
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }
  [[noreturn]] void error(const std::string& msg) const { fail(ErrorKind::decode, origin_ + ": " + msg); }

 private:
  std::uint64_t le(int n, const char* what) {
    const auto s = take(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

}  // namespace

Checkpoint snapshot(Network& network) {
  Checkpoint ck;
  ck.seed = network.seed();
  ck.config = network.config();
  for (const auto& p : network.parameters()) {
    const auto v = p.tensor.values();
    ck.tensors.push_back({p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
  for (const auto& [name, state] : network.norm_states()) {
    const Shape shape{state->running_mean.size()};
    ck.tensors.push_back({name + ".running_mean", shape, state->running_mean});
    ck.tensors.push_back({name + ".running_var", shape, state->running_var});
  }
  return ck;
}

void restore_into(Network& network, const Checkpoint& checkpoint) {
  std::size_t next = 0;
  auto expect = [&](const std::string& name, const Shape& shape) -> const StoredTensor& {
    if (next >= checkpoint.tensors.size()) {
      fail(ErrorKind::decode, "checkpoint is missing tensor " + name);
    }
    const auto& t = checkpoint.tensors[next++];
    if (t.name != name) {
      fail(ErrorKind::decode, "checkpoint tensor " + t.name + " found where " + name + " was expected");
    }
    if (t.shape != shape) {
      fail(ErrorKind::decode, "checkpoint tensor " + name + " has shape " + to_string(t.shape) +
                                  ", network expects " + to_string(shape));
    }
    return t;
  };
  for (const auto& p : network.parameters()) {
    const auto& t = expect(p.name, p.tensor.shape());
    std::copy(t.values.begin(), t.values.end(), p.tensor.mutable_values().begin());
  }
  for (const auto& [name, state] : network.norm_states()) {
    const Shape shape{state->running_mean.size()};
    state->running_mean = expect(name + ".running_mean", shape).values;
    state->running_var = expect(name + ".running_var", shape).values;
  }
  if (next != checkpoint.tensors.size()) {
    fail(ErrorKind::decode, "checkpoint has unexpected tensor " + checkpoint.tensors[next].name);
  }
}

Network restore(const Checkpoint& checkpoint) {
  Network net(checkpoint.config, checkpoint.seed);
  restore_into(net, checkpoint);
  return net;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(ck.version);
  w.u64(ck.seed);
  const auto& c = ck.config;
  w.i32(c.n_a);
  w.i32(c.n_b);
  w.i32(c.n_c);
  w.f64(c.width);
  w.i32(c.num_classes);
  w.i32(c.input_size);
  w.f64(c.residual_scale);
  w.u8(static_cast<std::uint8_t>(c.stem));
  w.f64(c.dropout);
  w.u8(c.normalize ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ck.metadata.size()));
  for (const auto& [k, v] : ck.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.values.size() != element_count(t.shape)) {
      fail(ErrorKind::shape, "tensor " + t.name + " holds " + std::to_string(t.values.size()) +
                                 " values for shape " + to_string(t.shape));
    }
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (double v : t.values) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.remaining() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    r.error("not a kilnnet checkpoint");
  }
  r.take(sizeof kCheckpointMagic, "magic");
  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != kCheckpointVersion) {
    r.error("unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.seed = r.u64("seed");
  auto& c = ck.config;
  c.n_a = r.i32("config");
  c.n_b = r.i32("config");
  c.n_c = r.i32("config");
  c.width = r.f64("config");
  c.num_classes = r.i32("config");
  c.input_size = r.i32("config");
  c.residual_scale = r.f64("config");
  const auto stem = r.u8("config");
  if (stem > static_cast<std::uint8_t>(StemKind::desk)) r.error("bad stem kind");
  c.stem = static_cast<StemKind>(stem);
  c.dropout = r.f64("config");
  const auto norm = r.u8("config");
  if (norm > 1) r.error("bad normalize flag");
  c.normalize = norm == 1;
  const auto n_meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str("metadata key");
    ck.metadata[k] = r.str("metadata value");
  }
  const auto n_tensors = r.u32("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    StoredTensor t;
    t.name = r.str("tensor name");
    const auto rank = r.u32("tensor rank");
    if (rank > 8) r.error("tensor " + t.name + " has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u64("tensor dims"));
      if (t.shape.back() != 0 && n > r.remaining() / t.shape.back()) {
        r.error("tensor " + t.name + " is larger than the file");
      }
      n *= t.shape.back();
    }
    if (n > r.remaining() / 8) r.error("tensor " + t.name + " is larger than the file");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f64("tensor values");
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.error(std::to_string(r.remaining()) + " trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path), path);
}

}  // namespace kiln
