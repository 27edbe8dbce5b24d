#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "oracles.hpp"
#include "packetclip/error.hpp"
#include "packetclip/ingest.hpp"

using namespace packetclip;
using namespace packetclip::ingest;
namespace ts = testsupport;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("pc_ingest_" + name)).string();
}

}  // namespace

TEST_CASE("read_pcap: empty capture yields empty sequence") {
  auto path = tmp_path("empty.pcap");
  ts::write_file(path, ts::pcap_bytes({}, false));
  auto seq = read_pcap(path);
  CHECK(seq.records.empty());
}

TEST_CASE("read_pcap: records sorted by timestamp") {
  auto path = tmp_path("sort.pcap");
  std::vector<ts::FixturePacket> pkts = {
      {5, 0, ts::udp_frame(1000, 80, 10, 0xaa)},
      {3, 0, ts::udp_frame(1001, 80, 10, 0xbb)},
      {4, 0, ts::udp_frame(1002, 80, 10, 0xcc)},
  };
  ts::write_file(path, ts::pcap_bytes(pkts, false));
  auto seq = read_pcap(path);
  REQUIRE(seq.records.size() == 3);
  CHECK(seq.records[0].ts_us == 3000000);
  CHECK(seq.records[1].ts_us == 4000000);
  CHECK(seq.records[2].ts_us == 5000000);
}

TEST_CASE("read_pcap: sorting is stable and idempotent") {
  auto path = tmp_path("stable.pcap");
  std::vector<ts::FixturePacket> pkts;
  for (int i = 0; i < 6; ++i)
    pkts.push_back({7, 0, ts::udp_frame(uint16_t(2000 + i), 80, 8, uint8_t(i))});
  ts::write_file(path, ts::pcap_bytes(pkts, false));
  auto seq = read_pcap(path);
  REQUIRE(seq.records.size() == 6);
  // equal keys keep file order
  for (int i = 0; i < 6; ++i) CHECK(seq.records[size_t(i)].flow_key.src_port == 2000 + i);
  auto again = seq;
  sort_by_time(again);
  for (size_t i = 0; i < 6; ++i)
    CHECK(again.records[i].flow_key.src_port == seq.records[i].flow_key.src_port);
}

TEST_CASE("read_pcap: swapped magic, 60-byte record padded to max_payload_len") {
  auto path = tmp_path("swapped.pcap");
  auto frame = ts::udp_frame(4242, 53, 60 - 42, 0x5a);  // 60 bytes total
  REQUIRE(frame.size() == 60);
  ts::write_file(path, ts::pcap_bytes({{10, 500, frame}}, true));
  PcapReadOptions opt;
  opt.max_payload_len = 128;
  auto seq = read_pcap(path, opt);
  REQUIRE(seq.records.size() == 1);
  const auto& rec = seq.records[0];
  CHECK(rec.ts_us == 10 * 1000000 + 500);
  REQUIRE(rec.payload.size() == 128);
  // byte-for-byte: original frame then zero padding
  for (size_t i = 0; i < 60; ++i) CHECK(rec.payload[i] == frame[i]);
  for (size_t i = 60; i < 128; ++i) CHECK(rec.payload[i] == 0);
  CHECK(rec.flow_key.src_port == 4242);
  CHECK(rec.flow_key.dst_port == 53);
  CHECK(rec.flow_key.protocol == 17);
  CHECK(rec.flow_key.src_addr == "10.0.0.1");
}

TEST_CASE("read_pcap: truncation to max_payload_len") {
  auto path = tmp_path("trunc.pcap");
  ts::write_file(path, ts::pcap_bytes({{1, 0, ts::udp_frame(1, 2, 300, 0x11)}}, false));
  PcapReadOptions opt;
  opt.max_payload_len = 64;
  auto seq = read_pcap(path, opt);
  REQUIRE(seq.records.size() == 1);
  CHECK(seq.records[0].payload.size() == 64);
}

TEST_CASE("read_pcap: bad magic raises unsupported-format") {
  auto path = tmp_path("bad.pcap");
  std::string bytes = ts::pcap_bytes({}, false);
  bytes[0] = 0x00;
  ts::write_file(path, bytes);
  CHECK_THROWS_WITH_AS(read_pcap(path), doctest::Contains("magic"), Error);
  try {
    read_pcap(path);
  } catch (const Error& e) {
    CHECK(e.code() == Err::unsupported_format);
  }
}

TEST_CASE("read_pcap: nanosecond magic rejected, not converted") {
  auto path = tmp_path("nsec.pcap");
  std::string bytes = ts::pcap_bytes({}, false);
  uint32_t magic = 0xA1B23C4Du;
  bytes.replace(0, 4, reinterpret_cast<const char*>(&magic), 4);
  ts::write_file(path, bytes);
  try {
    read_pcap(path);
    FAIL("expected unsupported-format");
  } catch (const Error& e) {
    CHECK(e.code() == Err::unsupported_format);
  }
}

TEST_CASE("read_pcap: truncated record reports byte offset") {
  auto path = tmp_path("cut.pcap");
  std::string bytes = ts::pcap_bytes({{1, 0, ts::udp_frame(1, 2, 40, 0x22)}}, false);
  bytes.resize(bytes.size() - 10);  // cut into the record data
  ts::write_file(path, bytes);
  try {
    read_pcap(path);
    FAIL("expected corrupt-capture");
  } catch (const Error& e) {
    CHECK(e.code() == Err::corrupt_capture);
    CHECK(std::string(e.what()).find("byte offset 24") != std::string::npos);
  }
}

TEST_CASE("read_pcap: strip-to-transport flag") {
  auto path = tmp_path("strip.pcap");
  ts::write_file(path, ts::pcap_bytes({{1, 0, ts::udp_frame(9, 9, 20, 0x77)}}, false));
  PcapReadOptions opt;
  opt.strip_to_transport = true;
  opt.max_payload_len = 20;
  auto seq = read_pcap(path, opt);
  REQUIRE(seq.records.size() == 1);
  // 14 (eth) + 20 (ip) + 8 (udp) headers removed, leaving the 20 filler bytes
  CHECK(seq.records[0].payload == std::vector<uint8_t>(20, 0x77));
}

// ---------------------------------------------------------------------------

static void write_csv(const std::string& path, const std::string& text) {
  ts::write_file(path, text);
}

static std::map<std::string, std::string> demo_schema() {
  return {{"src_addr", "Src IP"},   {"dst_addr", "Dst IP"},     {"src_port", "Src Port"},
          {"dst_port", "Dst Port"}, {"protocol", "Protocol"},   {"start_time", "Start"},
          {"duration", "Duration"}, {"packet_count", "Packets"}, {"byte_count", "Bytes"},
          {"label", "Label"}};
}

TEST_CASE("read_flow_csv: zero data rows") {
  auto path = tmp_path("empty.csv");
  write_csv(path, "Src IP,Dst IP,Src Port,Dst Port,Protocol,Start,Duration,Packets,Bytes,Label\n");
  auto res = read_flow_csv(path, demo_schema());
  CHECK(res.flows.empty());
  CHECK(res.row_errors.empty());
}

TEST_CASE("read_flow_csv: numeric parsing and aux columns") {
  auto path = tmp_path("basic.csv");
  write_csv(path,
            "Src IP,Dst IP,Src Port,Dst Port,Protocol,Start,Duration,Packets,Bytes,Label,Rate,Note\n"
            "10.0.0.1,10.0.0.2,1234,80,TCP,100.5,2.5,12,3400,dos,5.5,\"quoted, note\"\n");
  auto res = read_flow_csv(path, demo_schema());
  REQUIRE(res.flows.size() == 1);
  const auto& f = res.flows[0];
  CHECK(f.duration_s == doctest::Approx(2.5));
  CHECK(f.key.src_addr == "10.0.0.1");
  CHECK(f.key.protocol == 6);
  CHECK(f.key.dst_port == 80);
  CHECK(f.start_ts_us == 100500000);
  CHECK(f.packet_count == 12);
  CHECK(f.label == "dos");
  CHECK(f.rates.at("Rate") == doctest::Approx(5.5));
  CHECK(f.aux.at("Note") == "quoted, note");
}

TEST_CASE("read_flow_csv: missing mapped column names the column") {
  auto path = tmp_path("missing.csv");
  write_csv(path, "Src IP,Dst IP\n1,2\n");
  try {
    read_flow_csv(path, demo_schema());
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.code() == Err::schema);
    CHECK(std::string(e.what()).find("'") != std::string::npos);
  }
}

TEST_CASE("read_flow_csv: malformed row reported, others parsed") {
  auto path = tmp_path("badrow.csv");
  write_csv(path,
            "Src IP,Dst IP,Src Port,Dst Port,Protocol,Start,Duration,Packets,Bytes,Label\n"
            "10.0.0.1,10.0.0.2,1,2,TCP,1,1.0,10,100,a\n"
            "10.0.0.1,10.0.0.2,1,2,TCP,1,oops,10,100,b\n"
            "10.0.0.1,10.0.0.2,1,2,TCP,1,2.0,10,100,c\n"
            "10.0.0.1,10.0.0.2,1,2,TCP,1,3.0,10,100,d\n");
  auto res = read_flow_csv(path, demo_schema());
  CHECK(res.flows.size() == 3);
  REQUIRE(res.row_errors.size() == 1);
  CHECK(res.row_errors[0].find("row 2") != std::string::npos);
}

// ---------------------------------------------------------------------------

static LabeledSequence packets_for_key(const FlowKey& key, std::vector<int64_t> ts) {
  LabeledSequence seq;
  for (int64_t t : ts) {
    PacketRecord r;
    r.ts_us = t;
    r.flow_key = key;
    r.payload = {1, 2, 3};
    seq.records.push_back(r);
  }
  return seq;
}

TEST_CASE("align: no flows leaves everything unmatched") {
  FlowKey key{"1.1.1.1", "2.2.2.2", 10, 20, 6};
  auto seq = packets_for_key(key, {100, 200, 300});
  auto res = align({}, seq, 1.0);
  CHECK(res.unmatched == 3);
  CHECK(res.matched == 0);
  CHECK(res.seq.records.size() == 3);  // never drops packets
  for (const auto& r : res.seq.records) CHECK(r.label == "benign");
}

TEST_CASE("align: one covering flow matches all") {
  FlowKey key{"1.1.1.1", "2.2.2.2", 10, 20, 6};
  auto seq = packets_for_key(key, {1000000, 2000000, 3000000});
  FlowRecord flow;
  flow.key = key;
  flow.start_ts_us = 500000;
  flow.duration_s = 3.0;
  flow.label = "dos";
  auto res = align({flow}, seq, 1.0);
  CHECK(res.matched == 3);
  for (const auto& r : res.seq.records) CHECK(r.label == "dos");
  for (int fi : res.flow_of_packet) CHECK(fi == 0);
}

TEST_CASE("align: interval boundary at end + window/2 matches") {
  FlowKey key{"1.1.1.1", "2.2.2.2", 10, 20, 6};
  FlowRecord flow;
  flow.key = key;
  flow.start_ts_us = 0;
  flow.duration_s = 2.0;
  flow.label = "x";
  const double window = 1.0;
  // oracle: interval is [0, duration + window] = [0, 3.0s]
  int64_t probe = int64_t((flow.duration_s + window / 2) * 1e6);
  auto seq = packets_for_key(key, {probe});
  auto res = align({flow}, seq, window);
  CHECK(res.matched == 1);
  // just past the end is unmatched
  auto seq2 = packets_for_key(key, {int64_t((flow.duration_s + window) * 1e6) + 1});
  auto res2 = align({flow}, seq2, window);
  CHECK(res2.unmatched == 1);
}

TEST_CASE("align: reversed direction matches the same flow") {
  FlowKey key{"1.1.1.1", "2.2.2.2", 10, 20, 6};
  FlowRecord flow;
  flow.key = key;
  flow.start_ts_us = 0;
  flow.duration_s = 5.0;
  flow.label = "y";
  auto seq = packets_for_key(key.reversed(), {1000});
  auto res = align({flow}, seq, 1.0);
  CHECK(res.matched == 1);
  CHECK(res.seq.records[0].label == "y");
}

// ---------------------------------------------------------------------------

TEST_CASE("synth_dataset: determinism and cardinality") {
  auto a = synth_dataset(4, 100, 99);
  auto b = synth_dataset(4, 100, 99);
  REQUIRE(a.seq.records.size() == 400);
  CHECK(a.seq.class_set.size() == 4);
  REQUIRE(b.seq.records.size() == 400);
  for (size_t i = 0; i < a.seq.records.size(); ++i) {
    CHECK(a.seq.records[i].payload == b.seq.records[i].payload);
    CHECK(a.seq.records[i].ts_us == b.seq.records[i].ts_us);
    CHECK(a.seq.records[i].label == b.seq.records[i].label);
  }
  CHECK(a.flows.size() == b.flows.size());
}

TEST_CASE("synth_dataset: class byte histograms pairwise distinguishable") {
  auto data = synth_dataset(4, 150, 5);
  std::map<std::string, std::vector<double>> hist;
  std::map<std::string, double> totals;
  for (const auto& r : data.seq.records) {
    auto& h = hist[r.label];
    if (h.empty()) h.assign(256, 0.0);
    for (uint8_t b : r.payload) h[b] += 1.0;
    totals[r.label] += double(r.payload.size());
  }
  for (auto& [label, h] : hist)
    for (auto& v : h) v /= totals[label];
  std::vector<std::string> labels;
  for (auto& [l, _] : hist) labels.push_back(l);
  REQUIRE(labels.size() == 4);
  for (size_t i = 0; i < labels.size(); ++i)
    for (size_t j = i + 1; j < labels.size(); ++j) {
      double l1 = 0;
      for (int b = 0; b < 256; ++b) l1 += std::abs(hist[labels[i]][size_t(b)] - hist[labels[j]][size_t(b)]);
      INFO(labels[i], " vs ", labels[j], " L1=", l1);
      CHECK(l1 > 0.5);
    }
}

TEST_CASE("synth_dataset: timestamps sorted, flows align with packets") {
  auto data = synth_dataset(3, 60, 11);
  for (size_t i = 1; i < data.seq.records.size(); ++i)
    CHECK(data.seq.records[i - 1].ts_us <= data.seq.records[i].ts_us);
  auto res = align(data.flows, data.seq, 1.0);
  CHECK(res.unmatched == 0);
  for (size_t i = 0; i < res.seq.records.size(); ++i)
    CHECK(res.seq.records[i].label == data.seq.records[i].label);
}

// ---------------------------------------------------------------------------

TEST_CASE("split_dataset: fraction 1.0 takes the whole pool") {
  auto data = synth_dataset(4, 50, 3);
  auto s = split_dataset(data.seq, 1.0, 1);
  CHECK(s.test.records.size() == data.seq.records.size() / 5);
  CHECK(s.train.records.size() == data.seq.records.size() - s.test.records.size());
}

TEST_CASE("split_dataset: deterministic per seed") {
  auto data = synth_dataset(4, 50, 3);
  auto a = split_dataset(data.seq, 0.3, 77);
  auto b = split_dataset(data.seq, 0.3, 77);
  REQUIRE(a.train_indices == b.train_indices);
  auto c = split_dataset(data.seq, 0.3, 78);
  CHECK(a.train_indices != c.train_indices);
}

TEST_CASE("split_dataset: test set identical across fractions") {
  auto data = synth_dataset(4, 100, 9);
  auto base = split_dataset(data.seq, 1.0, 5);
  for (double f : {0.7, 0.5, 0.4, 0.3}) {
    auto s = split_dataset(data.seq, f, 5);
    REQUIRE(s.test_indices == base.test_indices);
    REQUIRE(s.test.records.size() == base.test.records.size());
    for (size_t i = 0; i < s.test.records.size(); ++i) {
      CHECK(s.test.records[i].ts_us == base.test.records[i].ts_us);
      CHECK(s.test.records[i].payload == base.test.records[i].payload);
    }
  }
}

TEST_CASE("split_dataset: stratified counts at fraction 0.5") {
  // 1000 records, 4 balanced classes; pool = 800 with 200 per class
  auto data = synth_dataset(4, 250, 21);
  REQUIRE(data.seq.records.size() == 1000);
  auto s = split_dataset(data.seq, 0.5, 13);
  std::map<std::string, int> counts;
  for (const auto& r : s.train.records) ++counts[r.label];
  CHECK(s.train.records.size() == 400);
  for (const auto& [label, n] : counts) {
    INFO(label, " -> ", n);
    CHECK(n >= 99);
    CHECK(n <= 101);
  }
}

TEST_CASE("split_dataset: tiny fraction warns rather than fails") {
  auto data = synth_dataset(2, 10, 2);
  auto s = split_dataset(data.seq, 0.01, 3);
  CHECK(!s.warnings.empty());
}

TEST_CASE("split_dataset: invalid fraction rejected") {
  auto data = synth_dataset(2, 10, 2);
  CHECK_THROWS_AS(split_dataset(data.seq, 0.0, 1), Error);
  CHECK_THROWS_AS(split_dataset(data.seq, 1.5, 1), Error);
}
