#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "attrcenter/trainer/trainer.hpp"

namespace attrcenter::trainer {

using ad::Tensor;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'C', 'L', 'M'};

class Writer {
 public:
  template <class T>
  void raw(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void record(const std::string& name, std::span<const double> values) {
    raw(static_cast<std::uint32_t>(name.size()));
    buf_.insert(buf_.end(), name.begin(), name.end());
    raw(static_cast<std::uint32_t>(values.size()));
    for (double v : values) raw(static_cast<float>(v));
  }
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}
  template <class T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError(path_ + ": truncated checkpoint");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::vector<double> config_values(const encoders::EncoderConfig& c) {
  std::vector<double> v{static_cast<double>(c.input_channels), static_cast<double>(c.input_height),
                        static_cast<double>(c.input_width),    static_cast<double>(c.embedding_dim),
                        c.projection ? 1.0 : 0.0,              c.pool == encoders::PoolKind::Max ? 0.0 : 1.0,
                        c.batch_norm ? 1.0 : 0.0,              static_cast<double>(c.stages.size())};
  for (const auto& s : c.stages) {
    v.insert(v.end(), {static_cast<double>(s.out_channels), static_cast<double>(s.kernel), static_cast<double>(s.stride),
                       static_cast<double>(s.pool)});
  }
  return v;
}

encoders::EncoderConfig config_from(const std::vector<double>& v, const std::string& path) {
  auto at = [&](std::size_t i) {
    if (i >= v.size()) throw CheckpointError(path + ": malformed encoder config record");
    return static_cast<std::size_t>(v[i]);
  };
  encoders::EncoderConfig c;
  c.input_channels = at(0);
  c.input_height = at(1);
  c.input_width = at(2);
  c.embedding_dim = at(3);
  c.projection = at(4) != 0;
  c.pool = at(5) == 0 ? encoders::PoolKind::Max : encoders::PoolKind::Avg;
  c.batch_norm = at(6) != 0;
  const std::size_t n = at(7);
  if (v.size() != 8 + 4 * n) throw CheckpointError(path + ": malformed encoder config record");
  for (std::size_t i = 0; i < n; ++i) c.stages.push_back({at(8 + 4 * i), at(9 + 4 * i), at(10 + 4 * i), at(11 + 4 * i)});
  return c;
}

// 64-bit counters as four exact 16-bit limbs.
std::vector<double> limbs(std::uint64_t x) {
  return {static_cast<double>(x & 0xffff), static_cast<double>((x >> 16) & 0xffff),
          static_cast<double>((x >> 32) & 0xffff), static_cast<double>(x >> 48)};
}

std::uint64_t from_limbs(const std::vector<double>& v, const std::string& path) {
  if (v.size() != 4) throw CheckpointError(path + ": malformed counter record");
  std::uint64_t x = 0;
  for (int i = 3; i >= 0; --i) x = (x << 16) | static_cast<std::uint64_t>(v[static_cast<std::size_t>(i)]);
  return x;
}

void put_encoder(Writer& w, const std::string& prefix, const encoders::Encoder& enc,
                 const std::vector<Tensor>& velocity) {
  w.record(prefix + ".config", config_values(enc.config()));
  for (const auto& p : enc.parameters()) w.record(prefix + "/" + p.name, p.value.data());
  for (const auto& b : enc.buffers()) w.record(prefix + "/" + b.name, b.value.data());
  for (std::size_t k = 0; k < velocity.size(); ++k)
    w.record("optim/" + prefix + "/" + enc.parameters()[k].name, velocity[k].data());
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.raw(kCheckpointVersion);
  w.raw(state.registry.schema().hash());
  put_encoder(w, "photo", state.photo, state.photo_velocity);
  put_encoder(w, "sketch", state.sketch, state.sketch_velocity);
  w.record("centers", state.registry.centers().data());
  w.record("epoch", limbs(state.epoch));
  w.record("step", limbs(state.step));
  w.record("rng", limbs(state.seed));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path, const lattice::AttributeSchema& schema,
                           const lattice::MarginConfig& margins) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + where);
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), where);

  if (r.str(4) != std::string(kMagic, 4)) throw CheckpointError(where + ": bad magic, not a checkpoint file");
  const auto version = r.raw<std::uint32_t>();
  if (version > kCheckpointVersion || version == 0) {
    throw CheckpointError(where + ": unsupported checkpoint version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto hash = r.raw<std::uint64_t>();
  if (hash != schema.hash()) throw CheckpointError(where + ": checkpoint was written for a different attribute schema");

  std::map<std::string, std::vector<double>> records;
  while (!r.done()) {
    const auto name = r.str(r.raw<std::uint32_t>());
    const auto count = r.raw<std::uint32_t>();
    std::vector<double> values(count);
    for (auto& v : values) v = static_cast<double>(r.raw<float>());
    records[name] = std::move(values);
  }
  auto take = [&](const std::string& name) -> const std::vector<double>& {
    const auto it = records.find(name);
    if (it == records.end()) throw CheckpointError(where + ": missing record '" + name + "'");
    return it->second;
  };
  auto fill = [&](Tensor& t, const std::string& name) {
    const auto& v = take(name);
    if (v.size() != t.numel()) {
      throw CheckpointError(where + ": record '" + name + "' has " + std::to_string(v.size()) + " values, expected " +
                            std::to_string(t.numel()));
    }
    std::copy(v.begin(), v.end(), t.data().begin());
  };

  auto load_encoder = [&](const std::string& prefix, std::vector<Tensor>& velocity) {
    encoders::Encoder enc(config_from(take(prefix + ".config"), where), 0);
    for (auto& p : enc.parameters()) fill(p.value, prefix + "/" + p.name);
    for (auto& b : enc.buffers()) fill(b.value, prefix + "/" + b.name);
    if (records.count("optim/" + prefix + "/" + enc.parameters().front().name)) {
      for (auto& p : enc.parameters()) {
        velocity.emplace_back(p.value.shape(), 0.0);
        fill(velocity.back(), "optim/" + prefix + "/" + p.name);
      }
    }
    return enc;
  };
  std::vector<Tensor> pv, sv;
  auto photo = load_encoder("photo", pv);
  auto sketch = load_encoder("sketch", sv);
  if (photo.config().embedding_dim != sketch.config().embedding_dim) {
    throw CheckpointError(where + ": photo and sketch embedding dims differ");
  }
  lattice::CenterRegistry registry(schema, photo.config().embedding_dim, margins);
  Tensor centers(ad::Shape{registry.center_count(), registry.dim()}, 0.0);
  fill(centers, "centers");
  registry.set_centers(std::move(centers));

  TrainState state{std::move(registry), std::move(photo), std::move(sketch), std::move(pv), std::move(sv),
                   from_limbs(take("rng"), where), from_limbs(take("epoch"), where), from_limbs(take("step"), where)};
  return state;
}

}  // namespace attrcenter::trainer
