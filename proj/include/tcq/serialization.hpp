#pragma once

#include "tcq/layer_quant.hpp"
#include "tcq/schedule.hpp"

#include "json.hpp"

namespace tcq {

using Json = nlohmann::json;

// Parses text; syntax errors become FormatError.
Json parse_json(std::string_view text);

// Missing keys keep their defaults; unknown keys and wrong types are
// FormatError, out-of-range values ParameterError.
Json to_json(const QuantizerConfig &c);
QuantizerConfig quantizer_config_from_json(const Json &j);

Json to_json(const AnnealSchedule &s);
AnnealSchedule schedule_from_json(const Json &j);

// Sidecar for a snapshot: configuration, fingerprint, geometry, rate.
Json snapshot_sidecar(const QuantizedMatrix &q, std::size_t file_bytes);

// Shared helper for strict object parsing.
void require_known_keys(const Json &j, std::initializer_list<const char *> keys,
                        const char *what);

} // namespace tcq
