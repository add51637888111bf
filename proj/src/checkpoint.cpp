#include "pnet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace pnet {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'E', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64_array(std::ostream& os, const double* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t u;
      std::memcpy(&u, &p[i], 8);
      put_u64(os, u);
    }
  }
}

[[noreturn]] void truncated() { throw std::runtime_error("truncated checkpoint: unexpected end of file"); }

bool try_read(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!try_read(is, b, 4)) truncated();
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!try_read(is, b, 8)) truncated();
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void get_f64_array(std::istream& is, double* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!try_read(is, p, n * sizeof(double))) truncated();
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t u = get_u64(is);
      std::memcpy(&p[i], &u, 8);
    }
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Config keys in canonical manifest order.
void config_to_manifest(const ModelConfig& c, std::ostringstream& out) {
  out << "vocab_size=" << c.vocab_size << '\n';
  out << "layers_enc=" << c.layers_enc << '\n';
  out << "layers_dec=" << c.layers_dec << '\n';
  out << "hidden=" << c.hidden << '\n';
  out << "ffn=" << c.ffn << '\n';
  out << "heads=" << c.heads << '\n';
  out << "ngram=" << c.ngram << '\n';
  out << "gamma=" << fmt_double(c.gamma) << '\n';
  out << "max_len=" << c.max_len << '\n';
  out << "dropout=" << fmt_double(c.dropout) << '\n';
  out << "num_buckets=" << c.num_buckets << '\n';
  out << "max_distance=" << c.max_distance << '\n';
}

std::string take(std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error("checkpoint manifest missing key: " + key);
  std::string v = it->second;
  kv.erase(it);
  return v;
}

std::int64_t take_int(std::map<std::string, std::string>& kv, const std::string& key) {
  return std::stoll(take(kv, key));
}

double take_double(std::map<std::string, std::string>& kv, const std::string& key) {
  return std::strtod(take(kv, key).c_str(), nullptr);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore& tensors,
                     const std::map<std::string, std::string>& extras) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);

  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);

  std::ostringstream manifest;
  config_to_manifest(config, manifest);
  for (const auto& [k, v] : extras) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint extra key contains '=' or newline: " + k);
    if (v.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint extra value contains newline for key: " + k);
    manifest << k << '=' << v << '\n';
  }
  const std::string m = manifest.str();
  put_u64(os, m.size());
  os.write(m.data(), static_cast<std::streamsize>(m.size()));

  for (const auto& [name, t] : tensors.items()) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, t.rank());
    for (std::int64_t d : t.shape) put_u64(os, static_cast<std::uint64_t>(d));
    put_f64_array(os, t.ptr(), static_cast<std::size_t>(t.numel()));
  }
  os.flush();
  if (!os) throw std::runtime_error("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[4];
  if (!try_read(is, magic, 4)) truncated();
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint (bad magic): " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "unsupported checkpoint version %u (this build reads version %u)",
                  version, kCheckpointVersion);
    throw std::runtime_error(buf);
  }

  const std::uint64_t mlen = get_u64(is);
  std::string manifest(mlen, '\0');
  if (mlen > 0 && !try_read(is, manifest.data(), mlen)) truncated();

  std::map<std::string, std::string> kv;
  std::istringstream mstream(manifest);
  std::string line;
  while (std::getline(mstream, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  Checkpoint ck;
  ck.config.vocab_size = take_int(kv, "vocab_size");
  ck.config.layers_enc = static_cast<int>(take_int(kv, "layers_enc"));
  ck.config.layers_dec = static_cast<int>(take_int(kv, "layers_dec"));
  ck.config.hidden = take_int(kv, "hidden");
  ck.config.ffn = take_int(kv, "ffn");
  ck.config.heads = static_cast<int>(take_int(kv, "heads"));
  ck.config.ngram = static_cast<int>(take_int(kv, "ngram"));
  ck.config.gamma = take_double(kv, "gamma");
  ck.config.max_len = take_int(kv, "max_len");
  ck.config.dropout = take_double(kv, "dropout");
  ck.config.num_buckets = static_cast<int>(take_int(kv, "num_buckets"));
  ck.config.max_distance = static_cast<int>(take_int(kv, "max_distance"));
  ck.extras = std::move(kv);

  for (;;) {
    unsigned char probe[8];
    is.read(reinterpret_cast<char*>(probe), 8);
    const std::streamsize got = is.gcount();
    if (got == 0) break;  // clean end of file
    if (got != 8) truncated();
    std::uint64_t name_len = 0;
    for (int i = 0; i < 8; ++i) name_len |= static_cast<std::uint64_t>(probe[i]) << (8 * i);
    if (name_len > (1u << 20)) throw std::runtime_error("corrupt checkpoint: implausible tensor name length");
    std::string name(name_len, '\0');
    if (name_len > 0 && !try_read(is, name.data(), name_len)) truncated();
    const std::uint64_t rank = get_u64(is);
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: implausible tensor rank");
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<std::int64_t>(get_u64(is));
      numel *= shape[i];
    }
    Tensor t = Tensor::zeros(std::move(shape));
    get_f64_array(is, t.ptr(), static_cast<std::size_t>(numel));
    ck.tensors.add(name, std::move(t));
  }
  return ck;
}

}  // namespace pnet
