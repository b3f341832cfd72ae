#pragma once

#include <string>

#include <json.hpp>

#include "layoutret/scene_graph.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

nlohmann::json scene_to_json(const SceneGraph& g);
/// `where` is a JSON pointer prefix used in error messages.
SceneGraph scene_from_json(const nlohmann::json& j, const std::string& where = "");

/// Parses JSON text, translating syntax errors into ParseError with the
/// parser's line and column.
nlohmann::json parse_json_text(std::string_view text, const std::string& what);

}  // namespace layoutret::inline LAYOUTRET_ABI
