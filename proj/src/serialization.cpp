#include "tcq/serialization.hpp"

#include <algorithm>
#include <cstdio>
#include <type_traits>

namespace tcq {

Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception &e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
}

void require_known_keys(const Json &j, std::initializer_list<const char *> keys,
                        const char *what) {
  if (!j.is_object())
    throw FormatError(std::string(what) + ": expected a JSON object");
  for (const auto &[key, value] : j.items()) {
    (void)value;
    if (std::none_of(keys.begin(), keys.end(),
                     [&](const char *k) { return key == k; }))
      throw FormatError(std::string(what) + ": unknown key '" + key + "'");
  }
}

namespace {

template <class T> void read_field(const Json &j, const char *key, T &out) {
  if (!j.contains(key))
    return;
  if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!j.at(key).is_number_unsigned())
      throw FormatError(std::string("field '") + key +
                        "': expected a non-negative integer");
  }
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception &e) {
    throw FormatError(std::string("field '") + key + "': " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

} // namespace

Json to_json(const QuantizerConfig &c) {
  return Json{{"L", c.code.L},
              {"k", c.code.k},
              {"V", c.code.V},
              {"permutation_seed", c.code.permutation_seed},
              {"topology", to_string(c.code.topology)},
              {"scale_bits", c.scale_bits},
              {"group_size", c.group_size}};
}

QuantizerConfig quantizer_config_from_json(const Json &j) {
  require_known_keys(j,
                     {"L", "k", "V", "permutation_seed", "topology",
                      "scale_bits", "group_size"},
                     "quantizer config");
  QuantizerConfig c;
  read_field(j, "L", c.code.L);
  read_field(j, "k", c.code.k);
  read_field(j, "V", c.code.V);
  read_field(j, "permutation_seed", c.code.permutation_seed);
  std::string topo = to_string(c.code.topology);
  read_field(j, "topology", topo);
  c.code.topology = topology_from_string(topo);
  read_field(j, "scale_bits", c.scale_bits);
  read_field(j, "group_size", c.group_size);
  validate(c);
  return c;
}

Json to_json(const AnnealSchedule &s) {
  return Json{{"T0", s.T0},
              {"T_end", s.T_end},
              {"n_steps", s.n_steps},
              {"kind", to_string(s.kind)}};
}

AnnealSchedule schedule_from_json(const Json &j) {
  require_known_keys(j, {"T0", "T_end", "n_steps", "kind"}, "schedule");
  AnnealSchedule s;
  read_field(j, "T0", s.T0);
  read_field(j, "T_end", s.T_end);
  read_field(j, "n_steps", s.n_steps);
  std::string kind = to_string(s.kind);
  read_field(j, "kind", kind);
  s.kind = schedule_kind_from_string(kind);
  validate(s);
  return s;
}

Json snapshot_sidecar(const QuantizedMatrix &q, std::size_t file_bytes) {
  const auto trellis = build_trellis(q.config.code);
  const double n = static_cast<double>(q.geometry.n_elements());
  return Json{
      {"config", to_json(q.config)},
      {"config_fingerprint", hex64(trellis.fingerprint())},
      {"rows", q.geometry.rows},
      {"cols", q.geometry.cols},
      {"padded_rows", q.geometry.padded_rows},
      {"padded_cols", q.geometry.padded_cols},
      {"incoherence", q.geometry.incoherence},
      {"transform_seed", q.geometry.transform_seed},
      {"n_blocks", q.n_blocks()},
      {"distortion", q.distortion},
      {"nominal_bpw", rate_bpw(trellis, q.config.scale_bits, q.config.group_size)},
      {"file_bytes", file_bytes},
      {"file_bits_per_weight", 8.0 * static_cast<double>(file_bytes) / n},
  };
}

} // namespace tcq
