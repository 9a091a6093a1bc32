#include "qkd/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "qkd/error.hpp"

namespace qkd {

namespace {

constexpr char kMagic[4] = {'Q', 'K', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw FormatError(std::string("checkpoint truncated reading ") + what + " at offset " +
                        std::to_string(pos));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const CheckpointData& data, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, data.intervals_initialized ? 1u : 0u);
  put_u32(out, static_cast<std::uint32_t>(data.spec_name.size()));
  out.append(data.spec_name);
  put_u32(out, static_cast<std::uint32_t>(data.num_classes));
  put_u64(out, data.records.size());
  for (const auto& [name, t] : data.records) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("short write to '" + path + "'");
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t flags = r.u32("flags");
  CheckpointData data;
  data.intervals_initialized = (flags & 1u) != 0;
  data.spec_name = r.str("spec name");
  data.num_classes = static_cast<int>(r.u32("num_classes"));
  const std::uint64_t count = r.u64("record count");
  data.records.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.str("record name");
    const std::uint32_t ndim = r.u32("record ndim");
    std::vector<std::size_t> shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<std::size_t>(r.u64("record dim"));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64("record data");
    data.records.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.pos != buf.size()) {
    throw FormatError("trailing bytes in checkpoint at offset " + std::to_string(r.pos));
  }
  return data;
}

void save_state(const NetworkState& state, const std::string& path,
                const std::vector<std::pair<std::string, Tensor>>& extra) {
  CheckpointData data;
  data.spec_name = state.spec().name;
  data.num_classes = state.spec().num_classes;
  data.intervals_initialized = state.intervals_initialized();
  for (const Parameter* p : state.parameters()) data.records.emplace_back(p->name, p->value);
  for (const auto& rec : extra) data.records.push_back(rec);
  write_checkpoint(data, path);
}

NetworkState load_state(const std::string& path, const NetworkSpec& spec,
                        std::vector<std::pair<std::string, Tensor>>* extra) {
  CheckpointData data = read_checkpoint(path);
  if (data.spec_name != spec.name) {
    throw FormatError("checkpoint holds spec '" + data.spec_name + "', expected '" + spec.name + "'");
  }
  if (data.num_classes != spec.num_classes) {
    throw FormatError("checkpoint class count " + std::to_string(data.num_classes) +
                      " does not match spec " + std::to_string(spec.num_classes));
  }
  NetworkState state(spec, 0);
  std::size_t filled = 0;
  for (auto& [name, t] : data.records) {
    if (name.rfind("opt.", 0) == 0) {
      if (extra) extra->emplace_back(name, std::move(t));
      continue;
    }
    if (!state.has_param(name)) {
      throw FormatError("checkpoint record '" + name + "' has no matching parameter");
    }
    Parameter& p = state.param(name);
    if (!p.value.same_shape(t)) {
      throw FormatError("checkpoint record '" + name + "' shape " + shape_to_string(t.shape()) +
                        " does not match parameter shape " + shape_to_string(p.value.shape()));
    }
    p.value = std::move(t);
    ++filled;
  }
  for (Parameter* p : state.parameters()) {
    if (p->kind == ParamKind::Weight) {
      bool found = false;
      for (const auto& [name, t] : data.records) {
        if (name == p->name) {
          found = true;
          break;
        }
      }
      if (!found) throw FormatError("checkpoint is missing weight record '" + p->name + "'");
    }
  }
  (void)filled;
  state.set_intervals_initialized(data.intervals_initialized);
  return state;
}

}  // namespace qkd
