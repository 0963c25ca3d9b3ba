#pragma once

#include <string>
#include <vector>

#include "dpg/manifest.hpp"

namespace dpg::harness {

/// Plain-text report: per manifest, the pairwise judgment tallies
/// ("a & b & tie" columns plus win rate) and reward means with deltas
/// against the reference arm. With two or more manifests, appends a
/// reward comparison recomputed over their common prompt ids; an empty
/// intersection is an error.
std::string render_report(const std::vector<RunManifest>& manifests);

/// Same content as structured JSON.
std::string report_json(const std::vector<RunManifest>& manifests);

}  // namespace dpg::harness
