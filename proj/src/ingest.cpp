#include "packetclip/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "packetclip/error.hpp"
#include "packetclip/kvconfig.hpp"
#include "packetclip/rng.hpp"

namespace packetclip::ingest {

std::string FlowKey::digest() const {
  std::ostringstream ss;
  ss << src_addr << '|' << dst_addr << '|' << src_port << '|' << dst_port << '|' << int(protocol);
  return ss.str();
}

std::string protocol_name(uint8_t proto) {
  switch (proto) {
    case 1: return "icmp";
    case 6: return "tcp";
    case 17: return "udp";
    default: return std::to_string(int(proto));
  }
}

uint8_t protocol_number(const std::string& name) {
  std::string low;
  for (char c : name) low.push_back(char(std::tolower(static_cast<unsigned char>(c))));
  if (low == "tcp") return 6;
  if (low == "udp") return 17;
  if (low == "icmp") return 1;
  char* end = nullptr;
  long v = std::strtol(low.c_str(), &end, 10);
  if (end != low.c_str() && *end == '\0' && v >= 0 && v <= 255) return uint8_t(v);
  return 0;
}

void LabeledSequence::rebuild_class_set() {
  class_set.clear();
  for (const auto& r : records) class_set.push_back(r.label);
  std::sort(class_set.begin(), class_set.end());
  class_set.erase(std::unique(class_set.begin(), class_set.end()), class_set.end());
}

void sort_by_time(LabeledSequence& seq) {
  std::stable_sort(seq.records.begin(), seq.records.end(),
                   [](const PacketRecord& a, const PacketRecord& b) { return a.ts_us < b.ts_us; });
}

// ---------------------------------------------------------------------------
// pcap reading

namespace {

constexpr uint32_t kMagicUsec = 0xA1B2C3D4u;
constexpr uint32_t kMagicUsecSwapped = 0xD4C3B2A1u;
constexpr uint32_t kMagicNsec = 0xA1B23C4Du;
constexpr uint32_t kMagicNsecSwapped = 0x4D3CB2A1u;

struct ByteReader {
  const uint8_t* p;
  size_t n;
  size_t off = 0;
  bool swap = false;

  bool remaining(size_t k) const { return off + k <= n; }

  uint32_t u32() {
    uint32_t v;
    std::memcpy(&v, p + off, 4);
    off += 4;
    if (swap) v = __builtin_bswap32(v);
    return v;
  }
  uint16_t u16() {
    uint16_t v;
    std::memcpy(&v, p + off, 2);
    off += 2;
    if (swap) v = __builtin_bswap16(v);
    return v;
  }
};

std::string ipv4_str(const uint8_t* b) {
  std::ostringstream ss;
  ss << int(b[0]) << '.' << int(b[1]) << '.' << int(b[2]) << '.' << int(b[3]);
  return ss.str();
}

uint16_t be16(const uint8_t* b) { return uint16_t((uint16_t(b[0]) << 8) | b[1]); }

// Extracts the 5-tuple (and optionally the transport payload offset) from a
// captured frame. Returns false when the frame is not parseable IPv4.
bool parse_flow_key(const std::vector<uint8_t>& frame, uint32_t linktype, FlowKey* key,
                    size_t* transport_payload_off) {
  size_t ip_off = 0;
  if (linktype == 1) {  // Ethernet
    if (frame.size() < 14) return false;
    size_t off = 12;
    uint16_t ethertype = be16(frame.data() + off);
    off += 2;
    if (ethertype == 0x8100) {  // single VLAN tag
      if (frame.size() < off + 4) return false;
      ethertype = be16(frame.data() + off + 2);
      off += 4;
    }
    if (ethertype != 0x0800) return false;
    ip_off = off;
  } else if (linktype == 101 || linktype == 12) {  // raw IP
    ip_off = 0;
  } else {
    return false;
  }
  if (frame.size() < ip_off + 20) return false;
  const uint8_t* ip = frame.data() + ip_off;
  if ((ip[0] >> 4) != 4) return false;
  size_t ihl = size_t(ip[0] & 0x0f) * 4;
  if (ihl < 20 || frame.size() < ip_off + ihl) return false;
  key->protocol = ip[9];
  key->src_addr = ipv4_str(ip + 12);
  key->dst_addr = ipv4_str(ip + 16);
  size_t tr_off = ip_off + ihl;
  key->src_port = 0;
  key->dst_port = 0;
  size_t payload_off = tr_off;
  if (key->protocol == 6) {  // TCP
    if (frame.size() < tr_off + 20) return false;
    key->src_port = be16(frame.data() + tr_off);
    key->dst_port = be16(frame.data() + tr_off + 2);
    size_t doff = size_t(frame[tr_off + 12] >> 4) * 4;
    payload_off = tr_off + std::max<size_t>(doff, 20);
  } else if (key->protocol == 17) {  // UDP
    if (frame.size() < tr_off + 8) return false;
    key->src_port = be16(frame.data() + tr_off);
    key->dst_port = be16(frame.data() + tr_off + 2);
    payload_off = tr_off + 8;
  }
  if (transport_payload_off) *transport_payload_off = std::min(payload_off, frame.size());
  return true;
}

void normalize_payload(std::vector<uint8_t>& payload, size_t max_len) {
  if (payload.size() > max_len) payload.resize(max_len);
  if (payload.size() < max_len) payload.resize(max_len, 0);
}

}  // namespace

LabeledSequence read_pcap(const std::string& path, const PcapReadOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot open capture file: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 24) fail(Err::unsupported_format, "capture too small for a global header: " + path);
  uint32_t raw_magic;
  std::memcpy(&raw_magic, buf.data(), 4);
  if (raw_magic == kMagicNsec || raw_magic == kMagicNsecSwapped)
    fail(Err::unsupported_format, "nanosecond-resolution capture not supported: " + path);

  ByteReader r{buf.data(), buf.size()};
  if (raw_magic == kMagicUsec) {
    r.swap = false;
  } else if (raw_magic == kMagicUsecSwapped) {
    r.swap = true;
  } else {
    fail(Err::unsupported_format, "bad capture magic in " + path);
  }

  r.off = 4;
  r.u16();  // version major
  r.u16();  // version minor
  r.u32();  // thiszone
  r.u32();  // sigfigs
  uint32_t snaplen = r.u32();
  uint32_t linktype = r.u32();
  (void)snaplen;

  LabeledSequence seq;
  while (r.off < r.n) {
    size_t rec_off = r.off;
    if (!r.remaining(16))
      fail(Err::corrupt_capture,
           "truncated record header at byte offset " + std::to_string(rec_off));
    uint32_t ts_sec = r.u32();
    uint32_t ts_usec = r.u32();
    uint32_t incl_len = r.u32();
    r.u32();  // orig_len
    if (!r.remaining(incl_len))
      fail(Err::corrupt_capture, "truncated record data at byte offset " + std::to_string(rec_off));

    PacketRecord rec;
    rec.ts_us = int64_t(ts_sec) * 1000000 + int64_t(ts_usec);
    std::vector<uint8_t> frame(buf.begin() + long(r.off), buf.begin() + long(r.off + incl_len));
    r.off += incl_len;

    size_t payload_off = 0;
    bool keyed = parse_flow_key(frame, linktype, &rec.flow_key, &payload_off);
    if (opt.strip_to_transport && keyed) {
      rec.payload.assign(frame.begin() + long(payload_off), frame.end());
    } else {
      rec.payload = std::move(frame);
    }
    normalize_payload(rec.payload, opt.max_payload_len);
    seq.records.push_back(std::move(rec));
  }

  sort_by_time(seq);
  seq.rebuild_class_set();
  return seq;
}

// ---------------------------------------------------------------------------
// flow CSV

namespace {

// RFC4180-ish: quoted fields, "" escapes, newlines inside quotes.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"': in_quotes = true; row_started = true; break;
      case ',':
        row.push_back(field);
        field.clear();
        row_started = true;
        break;
      case '\r': break;
      case '\n':
        if (row_started || !field.empty() || !row.empty()) {
          row.push_back(field);
          field.clear();
          rows.push_back(row);
          row.clear();
          row_started = false;
        }
        break;
      default: field.push_back(c); row_started = true; break;
    }
  }
  if (row_started || !field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

bool parse_double(const std::string& s, double* out) {
  std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0') return false;
  *out = v;
  return true;
}

}  // namespace

FlowCsvResult read_flow_csv(const std::string& path,
                            const std::map<std::string, std::string>& schema_map) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::io, "cannot open flow csv: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  auto rows = parse_csv(ss.str());
  if (rows.empty()) fail(Err::schema, "flow csv has no header row: " + path);

  const auto& header = rows[0];
  std::map<std::string, int> col_index;
  for (size_t i = 0; i < header.size(); ++i) col_index[trim(header[i])] = int(i);

  // canonical -> column position
  std::map<std::string, int> mapped;
  for (const auto& [canonical, column] : schema_map) {
    auto it = col_index.find(column);
    if (it == col_index.end())
      fail(Err::schema, "schema-mapped column '" + column + "' (for '" + canonical +
                            "') missing from csv header");
    mapped[canonical] = it->second;
  }
  std::vector<bool> is_mapped(header.size(), false);
  for (auto& [_, idx] : mapped) is_mapped[size_t(idx)] = true;

  auto cell = [&](const std::vector<std::string>& row, const std::string& canonical) -> const std::string* {
    auto it = mapped.find(canonical);
    if (it == mapped.end()) return nullptr;
    if (size_t(it->second) >= row.size()) return nullptr;
    return &row[size_t(it->second)];
  };

  FlowCsvResult result;
  for (size_t ri = 1; ri < rows.size(); ++ri) {
    const auto& row = rows[ri];
    FlowRecord fr;
    bool bad = false;
    std::string bad_what;

    auto need_real = [&](const std::string& canonical, double* out) {
      const std::string* v = cell(row, canonical);
      if (!v) return;  // column not mapped; keep default
      if (!parse_double(*v, out)) {
        bad = true;
        bad_what = "unparseable numeric cell '" + *v + "' in column '" + canonical + "'";
      }
    };

    if (const std::string* v = cell(row, "src_addr")) fr.key.src_addr = trim(*v);
    if (const std::string* v = cell(row, "dst_addr")) fr.key.dst_addr = trim(*v);
    double port = 0;
    if (cell(row, "src_port")) {
      need_real("src_port", &port);
      fr.key.src_port = uint16_t(port);
    }
    port = 0;
    if (cell(row, "dst_port")) {
      need_real("dst_port", &port);
      fr.key.dst_port = uint16_t(port);
    }
    if (const std::string* v = cell(row, "protocol")) fr.key.protocol = protocol_number(trim(*v));
    double start_s = 0;
    need_real("start_time", &start_s);
    fr.start_ts_us = int64_t(std::llround(start_s * 1e6));
    need_real("duration", &fr.duration_s);
    need_real("packet_count", &fr.packet_count);
    need_real("byte_count", &fr.byte_count);
    if (const std::string* v = cell(row, "label")) fr.label = trim(*v);

    if (!bad) {
      for (size_t ci = 0; ci < header.size() && ci < row.size(); ++ci) {
        if (is_mapped[ci]) continue;
        std::string name = trim(header[ci]);
        if (name.empty()) continue;
        double num;
        if (parse_double(row[ci], &num))
          fr.rates[name] = num;
        else
          fr.aux[name] = trim(row[ci]);
      }
    }

    if (bad)
      result.row_errors.push_back("row " + std::to_string(ri) + ": " + bad_what);
    else
      result.flows.push_back(std::move(fr));
  }
  return result;
}

// ---------------------------------------------------------------------------
// align

AlignResult align(const std::vector<FlowRecord>& flows, const LabeledSequence& packets,
                  double window_s, const std::string& default_label) {
  if (window_s <= 0) fail(Err::config, "align window must be > 0");

  struct Interval {
    int64_t start_us;
    int64_t end_us;
    int flow_idx;
  };
  std::map<std::string, std::vector<Interval>> by_key;
  for (size_t i = 0; i < flows.size(); ++i) {
    const auto& f = flows[i];
    int64_t end = f.start_ts_us + int64_t(std::llround((f.duration_s + window_s) * 1e6));
    by_key[f.key.digest()].push_back({f.start_ts_us, end, int(i)});
  }
  for (auto& [_, v] : by_key)
    std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) {
      return a.start_us != b.start_us ? a.start_us < b.start_us : a.flow_idx < b.flow_idx;
    });

  auto find_flow = [&](const FlowKey& key, int64_t ts) -> int {
    auto it = by_key.find(key.digest());
    if (it == by_key.end()) return -1;
    for (const auto& iv : it->second) {
      if (iv.start_us > ts) break;
      if (ts <= iv.end_us) return iv.flow_idx;
    }
    return -1;
  };

  AlignResult out;
  out.seq = packets;
  out.flow_of_packet.assign(packets.records.size(), -1);
  for (size_t i = 0; i < out.seq.records.size(); ++i) {
    auto& rec = out.seq.records[i];
    int fi = find_flow(rec.flow_key, rec.ts_us);
    if (fi < 0) fi = find_flow(rec.flow_key.reversed(), rec.ts_us);
    if (fi >= 0) {
      rec.label = flows[size_t(fi)].label;
      out.flow_of_packet[i] = fi;
      ++out.matched;
    } else {
      rec.label = default_label;
      ++out.unmatched;
    }
  }
  out.seq.rebuild_class_set();
  return out;
}

// ---------------------------------------------------------------------------
// synthetic data

std::vector<std::string> synth_label_set(int num_classes) {
  static const std::vector<std::string> coarse = {"benign", "dos", "reconnaissance", "brute_force"};
  static const std::vector<std::string> fine = {
      "benign",    "os_scan",   "vulnerability_scan", "port_scan", "icmp_flood",
      "slowloris", "syn_flood", "udp_flood",          "dns_flood", "dictionary_attack"};
  if (num_classes <= int(coarse.size())) {
    return {coarse.begin(), coarse.begin() + num_classes};
  }
  if (num_classes == 10) return fine;
  std::vector<std::string> out = {"benign"};
  for (int i = 1; i < num_classes; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "attack_%02d", i);
    out.emplace_back(buf);
  }
  return out;
}

SynthResult synth_dataset(int num_classes, int per_class, uint64_t seed, const SynthOptions& opt) {
  if (num_classes < 2) fail(Err::config, "synth_dataset requires num_classes >= 2");
  if (per_class < 1) fail(Err::config, "synth_dataset requires per_class >= 1");

  const auto labels = synth_label_set(num_classes);
  const int n_attack = num_classes - 1;
  const int sig_width = std::clamp(200 / std::max(1, n_attack), 8, 32);

  Rng rng(mix_seed(seed, "synth"));

  // class sessions per round; one burst per class per round keeps the
  // temporal tail (the last 20%) covering every class
  int rounds = opt.burst_target > 0
                   ? std::max(1, (per_class + opt.burst_target - 1) / opt.burst_target)
                   : std::min(per_class, 5);
  std::vector<std::vector<int>> burst_sizes(static_cast<size_t>(num_classes),
                                            std::vector<int>(static_cast<size_t>(rounds), 0));
  for (int c = 0; c < num_classes; ++c) {
    int base = per_class / rounds, rem = per_class % rounds;
    for (int r = 0; r < rounds; ++r) burst_sizes[size_t(c)][size_t(r)] = base + (r < rem ? 1 : 0);
  }

  static const uint16_t dst_ports[] = {443, 80, 53, 22, 8080, 123, 25, 3389, 21, 5060, 110, 8443};
  static const uint8_t protos[] = {6, 17, 6, 6, 1, 6, 6, 17, 17, 6, 6, 17};

  SynthResult out;
  int64_t clock_us = 1700000000LL * 1000000LL;

  for (int r = 0; r < rounds; ++r) {
    std::vector<int> order(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) order[size_t(c)] = c;
    rng.shuffle(order);
    for (int c : order) {
      int burst = burst_sizes[size_t(c)][size_t(r)];
      if (burst == 0) continue;
      clock_us += 50000 + int64_t(rng.uniform_int(20000));

      FlowRecord flow;
      flow.key.src_addr = "10." + std::to_string(c) + "." + std::to_string(r) + "." +
                          std::to_string(1 + rng.uniform_int(250));
      flow.key.dst_addr = "192.168.0.10";
      flow.key.protocol = protos[size_t(c) % std::size(protos)];
      flow.key.dst_port = dst_ports[size_t(c) % std::size(dst_ports)];
      flow.key.src_port = flow.key.protocol == 1 ? 0 : uint16_t(20000 + rng.uniform_int(40000));
      if (flow.key.protocol == 1) flow.key.dst_port = 0;
      flow.label = labels[size_t(c)];
      flow.start_ts_us = clock_us;

      double bytes_total = 0;
      int64_t first_ts = clock_us, last_ts = clock_us;
      int base_len = 72 + 5 * c;
      int64_t gap_base = 300 + 150 * int64_t(c);

      for (int k = 0; k < burst; ++k) {
        PacketRecord rec;
        rec.ts_us = clock_us;
        rec.label = flow.label;
        rec.flow_key = flow.key;
        size_t len = size_t(std::clamp<int>(base_len + int(rng.uniform_int(33)) - 16, 24,
                                            int(opt.max_payload_len)));
        rec.payload.resize(len);
        bool informative = c > 0 && rng.uniform() < opt.informative_prob;
        int sig_lo = 32 + (c - 1) * sig_width;
        for (auto& b : rec.payload) {
          if (informative && rng.uniform() < opt.signature_density)
            b = uint8_t(sig_lo + int(rng.uniform_int(uint64_t(sig_width))));
          else
            b = uint8_t(rng.uniform_int(256));
        }
        bytes_total += double(len);
        last_ts = clock_us;
        out.seq.records.push_back(std::move(rec));
        clock_us += gap_base + int64_t(rng.uniform_int(400));
      }

      flow.duration_s = double(last_ts - first_ts) / 1e6;
      flow.packet_count = double(burst);
      flow.byte_count = bytes_total;
      flow.rates["mean_pkt_size"] = bytes_total / double(burst);
      flow.rates["pkts_per_s"] = flow.duration_s > 0 ? double(burst) / flow.duration_s : double(burst);
      out.flows.push_back(std::move(flow));
    }
  }

  sort_by_time(out.seq);
  out.seq.rebuild_class_set();
  return out;
}

// ---------------------------------------------------------------------------
// split

SplitResult split_dataset(const LabeledSequence& seq, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(Err::config, "split fraction must be in (0, 1]");

  const size_t n = seq.records.size();
  const size_t n_test = n / 5;  // last 20% by time, fixed regardless of fraction
  const size_t n_pool = n - n_test;

  SplitResult out;
  out.test.records.assign(seq.records.begin() + long(n_pool), seq.records.end());
  for (size_t i = n_pool; i < n; ++i) out.test_indices.push_back(i);

  std::map<std::string, std::vector<size_t>> by_label;
  for (size_t i = 0; i < n_pool; ++i) by_label[seq.records[i].label].push_back(i);

  std::vector<size_t> chosen;
  for (auto& [label, idxs] : by_label) {
    size_t k = size_t(std::llround(fraction * double(idxs.size())));
    if (k > idxs.size()) k = idxs.size();
    if (k == 0 && !idxs.empty())
      out.warnings.push_back("class '" + label + "' absent from train at fraction " +
                             std::to_string(fraction));
    Rng rng(mix_seed(mix_seed(seed, "split"), label));
    rng.shuffle(idxs);
    chosen.insert(chosen.end(), idxs.begin(), idxs.begin() + long(k));
  }
  std::sort(chosen.begin(), chosen.end());
  out.train.records.reserve(chosen.size());
  for (size_t i : chosen) out.train.records.push_back(seq.records[i]);
  out.train_indices = chosen;

  out.train.rebuild_class_set();
  out.test.rebuild_class_set();
  return out;
}

}  // namespace packetclip::ingest
