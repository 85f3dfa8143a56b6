#include "gptgnn/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

#include "gptgnn/errors.hpp"

namespace gptgnn {

void AdamW::step(ParameterStore& params, float lr) {
  for (const auto& p : params)
    if (!p.grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  const float decay = 1.0f - lr * cfg_.weight_decay;
  for (auto& p : params) {
    const std::size_t n = p.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const float g = p.grad[i];
      p.m1[i] = cfg_.beta1 * p.m1[i] + (1.0f - cfg_.beta1) * g;
      p.m2[i] = cfg_.beta2 * p.m2[i] + (1.0f - cfg_.beta2) * g * g;
      const double mhat = p.m1[i] / bc1;
      const double vhat = p.m2[i] / bc2;
      p.value[i] = p.value[i] * decay - static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

float cosine_lr(long step, long total_steps, float lr_max, float lr_min) {
  if (total_steps <= 0) return lr_max;
  step = std::clamp(step, 0L, total_steps);
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return static_cast<float>(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac)));
}

// ---------------------------------------------------------------------------
// base64

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(std::span<const unsigned char> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw DataError("base64 text length is not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw DataError("malformed base64 padding");
        v[k] = decode_char(c);
        if (v[k] < 0) throw DataError("invalid base64 character");
      }
    }
    const unsigned w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<unsigned char>((w >> 16) & 255));
    if (pad < 2) out.push_back(static_cast<unsigned char>((w >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<unsigned char>(w & 255));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string encode_floats(const Tensor& t) {
  std::vector<unsigned char> bytes(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>((u >> (8 * b)) & 255);
  }
  return base64_encode(bytes);
}

Tensor decode_floats(const std::vector<int>& shape, std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw DataError("checkpoint payload is not a float32 array");
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    v[i] = std::bit_cast<float>(u);
  }
  return Tensor(shape, std::move(v));
}

std::vector<int> parse_shape(const std::string& s) {
  std::vector<int> shape;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto x = s.find('x', start);
    shape.push_back(std::stoi(s.substr(start, x - start)));
    if (x == std::string::npos) break;
    start = x + 1;
  }
  return shape;
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path,
                     const std::vector<std::string>& comments) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << kCheckpointMagic << '\n';
  for (const auto& c : comments) os << "# " << c << '\n';
  for (const auto& p : params) {
    const auto shape = shape_string(p.value.shape());
    os << p.name << '\t' << shape << '\t' << encode_floats(p.value) << '\n';
    os << p.name << ".m1\t" << shape << '\t' << encode_floats(p.m1) << '\n';
    os << p.name << ".m2\t" << shape << '\t' << encode_floats(p.m2) << '\n';
  }
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw ParseError(path.string(), 1, "missing '" + std::string(kCheckpointMagic) + "' header");
  std::vector<std::pair<std::string, Tensor>> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError(path.string(), line_no, "expected name, shape, payload");
    try {
      const auto shape = parse_shape(line.substr(t1 + 1, t2 - t1 - 1));
      out.emplace_back(line.substr(0, t1), decode_floats(shape, std::string_view(line).substr(t2 + 1)));
    } catch (const std::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

void load_checkpoint(ParameterStore& params, const std::filesystem::path& path,
                     const std::string& prefix_filter) {
  std::map<std::string, Tensor> records;
  for (auto& [name, t] : read_checkpoint(path)) records[name] = std::move(t);
  std::vector<std::string> offending;
  for (auto& p : params) {
    if (!p.name.starts_with(prefix_filter)) continue;
    const auto it = records.find(p.name);
    if (it == records.end()) {
      offending.push_back(p.name + " (missing)");
    } else if (it->second.shape() != p.value.shape()) {
      offending.push_back(p.name + " (checkpoint " + shape_string(it->second.shape()) + ", model " +
                          shape_string(p.value.shape()) + ")");
    }
  }
  if (!offending.empty()) throw IncompatibleCheckpoint(std::move(offending));
  for (auto& p : params) {
    if (!p.name.starts_with(prefix_filter)) continue;
    p.value = records.at(p.name);
    for (auto [suffix, dst] : {std::pair{".m1", &p.m1}, std::pair{".m2", &p.m2}}) {
      const auto it = records.find(p.name + suffix);
      if (it != records.end() && it->second.shape() == p.value.shape()) *dst = it->second;
    }
  }
}

}  // namespace gptgnn
