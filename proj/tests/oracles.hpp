// Test-only oracles kept independent of the implementation paths they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "packetclip/mat.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// classic capture fixture bytes

struct FixturePacket {
  uint32_t ts_sec;
  uint32_t ts_usec;
  std::vector<uint8_t> data;
};

inline void put_u32(std::string& out, uint32_t v, bool swap) {
  if (swap) v = __builtin_bswap32(v);
  out.append(reinterpret_cast<const char*>(&v), 4);
}

inline void put_u16(std::string& out, uint16_t v, bool swap) {
  if (swap) v = __builtin_bswap16(v);
  out.append(reinterpret_cast<const char*>(&v), 2);
}

inline std::string pcap_bytes(const std::vector<FixturePacket>& packets, bool swapped,
                              uint32_t linktype = 1) {
  std::string out;
  put_u32(out, 0xA1B2C3D4u, swapped);
  put_u16(out, 2, swapped);
  put_u16(out, 4, swapped);
  put_u32(out, 0, swapped);
  put_u32(out, 0, swapped);
  put_u32(out, 65535, swapped);
  put_u32(out, linktype, swapped);
  for (const auto& p : packets) {
    put_u32(out, p.ts_sec, swapped);
    put_u32(out, p.ts_usec, swapped);
    put_u32(out, uint32_t(p.data.size()), swapped);
    put_u32(out, uint32_t(p.data.size()), swapped);
    out.append(reinterpret_cast<const char*>(p.data.data()), p.data.size());
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), long(bytes.size()));
}

// A minimal Ethernet+IPv4+UDP frame with the given ports and payload filler.
inline std::vector<uint8_t> udp_frame(uint16_t src_port, uint16_t dst_port, size_t payload_len,
                                      uint8_t fill) {
  std::vector<uint8_t> f(14 + 20 + 8 + payload_len, fill);
  for (int i = 0; i < 12; ++i) f[size_t(i)] = uint8_t(i);
  f[12] = 0x08;
  f[13] = 0x00;                 // IPv4
  f[14] = 0x45;                 // version 4, IHL 5
  f[14 + 9] = 17;               // UDP
  f[14 + 12] = 10;  f[14 + 13] = 0;  f[14 + 14] = 0;  f[14 + 15] = 1;   // 10.0.0.1
  f[14 + 16] = 10;  f[14 + 17] = 0;  f[14 + 18] = 0;  f[14 + 19] = 2;   // 10.0.0.2
  f[34] = uint8_t(src_port >> 8);
  f[35] = uint8_t(src_port & 0xff);
  f[36] = uint8_t(dst_port >> 8);
  f[37] = uint8_t(dst_port & 0xff);
  return f;
}

// ---------------------------------------------------------------------------
// pairwise-concordance AUC

inline double auc_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  long long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / double(pairs);
}

// ---------------------------------------------------------------------------
// dense literal evaluation of the hierarchical message-passing recursion

// adjacency[u][v] true when edge u -> v exists; x holds one row per node.
inline std::vector<packetclip::Mat> message_pass_dense(
    const std::vector<packetclip::Mat>& x, const std::vector<std::vector<bool>>& adjacency,
    bool use_tanh) {
  const size_t n = x.size();
  std::vector<packetclip::Mat> out(n);
  for (size_t v = 0; v < n; ++v) {
    std::vector<size_t> preds;
    for (size_t u = 0; u < n; ++u)
      if (adjacency[u][v]) preds.push_back(u);
    if (preds.empty()) {
      out[v] = x[v];
      continue;
    }
    packetclip::Mat acc(1, x[v].cols());
    for (size_t u : preds) {
      for (int c = 0; c < x[v].cols(); ++c) {
        double m = x[v].at(0, c) * x[u].at(0, c);
        acc.at(0, c) += use_tanh ? std::tanh(m) : m;
      }
    }
    for (auto& val : acc.values()) val /= double(preds.size());
    out[v] = std::move(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// central finite differences

template <class LossFn>
double central_diff(packetclip::Mat& param, int r, int c, double h, LossFn&& loss) {
  const double orig = param.at(r, c);
  param.at(r, c) = orig + h;
  double up = loss();
  param.at(r, c) = orig - h;
  double down = loss();
  param.at(r, c) = orig;
  return (up - down) / (2.0 * h);
}

}  // namespace testsupport
