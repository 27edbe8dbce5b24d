#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace packetclip::ingest {

struct FlowKey {
  std::string src_addr;
  std::string dst_addr;
  uint16_t src_port = 0;
  uint16_t dst_port = 0;
  uint8_t protocol = 0;

  bool operator==(const FlowKey& o) const = default;
  std::string digest() const;
  FlowKey reversed() const { return {dst_addr, src_addr, dst_port, src_port, protocol}; }
};

std::string protocol_name(uint8_t proto);
uint8_t protocol_number(const std::string& name);

struct PacketRecord {
  int64_t ts_us = 0;  // microseconds since epoch
  std::vector<uint8_t> payload;
  std::string label;
  FlowKey flow_key;
};

struct LabeledSequence {
  std::vector<PacketRecord> records;
  std::vector<std::string> class_set;  // ordered distinct labels

  void rebuild_class_set();
  size_t size() const { return records.size(); }
};

struct FlowRecord {
  FlowKey key;
  int64_t start_ts_us = 0;
  double duration_s = 0.0;
  double packet_count = 0.0;
  double byte_count = 0.0;
  std::map<std::string, double> rates;      // numeric auxiliary columns
  std::map<std::string, std::string> aux;   // non-numeric auxiliary columns
  std::string label;
};

struct PcapReadOptions {
  size_t max_payload_len = 128;
  bool strip_to_transport = false;  // keep link/IP headers by default
};

// Classic libpcap captures only; microsecond magic, either endianness.
// Nanosecond-magic files are rejected rather than converted.
LabeledSequence read_pcap(const std::string& path, const PcapReadOptions& opt = {});

struct FlowCsvResult {
  std::vector<FlowRecord> flows;
  std::vector<std::string> row_errors;  // "row <n>: <what>"
};

// schema_map: canonical name -> CSV column name. Canonical names:
// src_addr, dst_addr, src_port, dst_port, protocol, start_time, duration,
// packet_count, byte_count, label. Unmapped columns land in rates/aux.
FlowCsvResult read_flow_csv(const std::string& path,
                            const std::map<std::string, std::string>& schema_map);

struct AlignResult {
  LabeledSequence seq;
  std::vector<int> flow_of_packet;  // index into flows, -1 if unmatched
  size_t matched = 0;
  size_t unmatched = 0;
};

// Labels each packet from the flow with the same 5-tuple (exact first, then
// reversed) whose [start, start+duration+window] interval contains its
// timestamp. Unmatched packets get default_label and are counted, not dropped.
AlignResult align(const std::vector<FlowRecord>& flows, const LabeledSequence& packets,
                  double window_s, const std::string& default_label = "benign");

struct SynthOptions {
  size_t max_payload_len = 128;
  double informative_prob = 0.5;   // fraction of packets carrying class bytes
  double signature_density = 0.8;  // fraction of signature bytes inside those
  int burst_target = 0;            // packets per class session; 0 = auto
};

struct SynthResult {
  LabeledSequence seq;
  std::vector<FlowRecord> flows;
};

// Desk-scale synthetic traffic. Each class emits packets in contiguous
// sessions with a distinct payload byte signature and distinct flow
// statistics; sessions from different classes interleave on the timeline.
// num_classes 4 uses the coarse label set, 10 the fine-grained one.
SynthResult synth_dataset(int num_classes, int per_class, uint64_t seed,
                          const SynthOptions& opt = {});

std::vector<std::string> synth_label_set(int num_classes);

struct SplitResult {
  LabeledSequence train;
  LabeledSequence test;
  std::vector<size_t> train_indices;  // positions in the input sequence
  std::vector<size_t> test_indices;
  std::vector<std::string> warnings;
};

// Test set = last 20% by time, independent of fraction. Train = stratified
// random subset of the remainder at the given fraction.
SplitResult split_dataset(const LabeledSequence& seq, double fraction, uint64_t seed);

void sort_by_time(LabeledSequence& seq);  // stable

}  // namespace packetclip::ingest
