#pragma once

// Native JSON transform documents and Elastix TransformParameters import/export.

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sctreg/bspline.hpp"
#include "sctreg/errors.hpp"
#include "sctreg/metaimage.hpp"

namespace sctreg {

inline constexpr int kTransformFormatVersion = 1;

inline nlohmann::json transform_to_json(const BSplineTransform& T)
{
    nlohmann::json j;
    j["format_version"] = kTransformFormatVersion;
    j["type"] = "bspline";
    j["grid_dims"] = T.grid_dims();
    j["grid_spacing"] = T.grid_spacing();
    j["grid_origin"] = T.grid_origin();
    std::vector<double> dir;
    for (const auto& row : T.grid_direction())
        for (double x : row) dir.push_back(x);
    j["grid_direction"] = dir; // row-major
    j["coefficient_order"] = "all-x-then-y-then-z, control points x-fastest";
    j["coefficients"] = std::vector<double>(T.coefficients().begin(), T.coefficients().end());
    return j;
}

inline BSplineTransform transform_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("format_version").get<int>() != kTransformFormatVersion)
            throw UnsupportedError("transform: unsupported format_version " + j.at("format_version").dump());
        const auto dims = j.at("grid_dims").get<Index3>();
        const auto spacing = j.at("grid_spacing").get<Vec3>();
        const auto origin = j.at("grid_origin").get<Vec3>();
        const auto dir = j.at("grid_direction").get<std::vector<double>>();
        if (dir.size() != 9) throw ParseError("transform: grid_direction needs 9 values");
        Mat3 m{};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r][c] = dir[3 * r + c];
        return BSplineTransform(dims, spacing, origin, m, j.at("coefficients").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("transform: malformed document: ") + e.what());
    }
}

inline void save_transform(const BSplineTransform& T, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("transform: cannot open '" + path.string() + "' for writing");
    out << transform_to_json(T).dump(2) << "\n";
    if (!out) throw IoError("transform: write failed for '" + path.string() + "'");
}

inline BSplineTransform load_transform(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("transform: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("transform: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return transform_from_json(j);
}

// ---------------------------------------------------------------------------
// Elastix TransformParameters files: "(Key value value ...)" entries, "//" comments.

struct ElastixEntry {
    std::vector<std::string> values; // quoted strings are unquoted
    int line = 0;
};

using ElastixParameters = std::map<std::string, ElastixEntry>;

inline ElastixParameters parse_elastix_parameters(const std::string& text)
{
    ElastixParameters out;
    std::size_t i = 0;
    int line = 1;
    const auto fail = [&](const std::string& what) {
        throw ParseError("elastix: " + what + " on line " + std::to_string(line));
    };
    while (i < text.size()) {
        const char ch = text[i];
        if (ch == '\n') { ++line; ++i; continue; }
        if (std::isspace(static_cast<unsigned char>(ch))) { ++i; continue; }
        if (ch == '/' && i + 1 < text.size() && text[i + 1] == '/') {
            while (i < text.size() && text[i] != '\n') ++i;
            continue;
        }
        if (ch != '(') fail("expected '(' to open an entry");
        const int start_line = line;
        ++i;
        std::vector<std::string> tokens;
        bool closed = false;
        while (i < text.size()) {
            const char c = text[i];
            if (c == '\n') { ++line; ++i; continue; }
            if (std::isspace(static_cast<unsigned char>(c))) { ++i; continue; }
            if (c == ')') { closed = true; ++i; break; }
            if (c == '(') fail("nested '('");
            if (c == '"') {
                const auto end = text.find('"', i + 1);
                if (end == std::string::npos || text.find('\n', i + 1) < end) fail("unterminated string");
                tokens.push_back(text.substr(i + 1, end - i - 1));
                i = end + 1;
                continue;
            }
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != ')' && text[j] != '(') ++j;
            tokens.push_back(text.substr(i, j - i));
            i = j;
        }
        if (!closed) { line = start_line; fail("unterminated entry"); }
        if (tokens.empty()) { line = start_line; fail("empty entry"); }
        const std::string key = tokens.front();
        tokens.erase(tokens.begin());
        out[key] = ElastixEntry{std::move(tokens), start_line};
    }
    return out;
}

struct ElastixImport {
    BSplineTransform transform;
    /// Set when the file chains to another transform; that stage is not loaded.
    std::optional<std::string> initial_transform;
};

namespace detail {

inline std::vector<double> elastix_reals(const ElastixParameters& p, const std::string& key, std::size_t expect)
{
    const auto it = p.find(key);
    if (it == p.end()) throw ParseError("elastix: missing key '" + key + "'");
    std::vector<double> out;
    out.reserve(it->second.values.size());
    for (const auto& tok : it->second.values) {
        double x = 0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
        if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
            throw ParseError("elastix: malformed number '" + tok + "' for key '" + key + "' on line " +
                             std::to_string(it->second.line));
        out.push_back(x);
    }
    if (expect != 0 && out.size() != expect)
        throw ParseError("elastix: key '" + key + "' on line " + std::to_string(it->second.line) + " expects " +
                         std::to_string(expect) + " values, got " + std::to_string(out.size()));
    return out;
}

} // namespace detail

inline ElastixImport elastix_from_parameters(const ElastixParameters& p)
{
    const auto type_it = p.find("Transform");
    if (type_it == p.end() || type_it->second.values.empty()) throw ParseError("elastix: missing key 'Transform'");
    const std::string type = type_it->second.values.front();
    if (type != "BSplineTransform" && type != "RecursiveBSplineTransform" && type != "AdvancedBSplineTransform")
        throw UnsupportedError("elastix: unsupported transform type '" + type + "'");
    for (const char* dimkey : {"FixedImageDimension", "MovingImageDimension"})
        if (p.count(dimkey) && detail::elastix_reals(p, dimkey, 1)[0] != 3)
            throw UnsupportedError(std::string("elastix: ") + dimkey + " must be 3");
    if (p.count("BSplineTransformSplineOrder")) {
        const double order = detail::elastix_reals(p, "BSplineTransformSplineOrder", 1)[0];
        if (order != 3)
            throw UnsupportedError("elastix: unsupported B-spline order " + format_real(order) + " (only cubic)");
    }
    if (p.count("UseCyclicTransform") && !p.at("UseCyclicTransform").values.empty() &&
        p.at("UseCyclicTransform").values.front() == "true")
        throw UnsupportedError("elastix: cyclic B-spline transforms are not supported");

    const auto size = detail::elastix_reals(p, "GridSize", 3);
    const auto spacing = detail::elastix_reals(p, "GridSpacing", 3);
    const auto origin = detail::elastix_reals(p, "GridOrigin", 3);
    Mat3 dir = identity_matrix();
    if (p.count("GridDirection")) {
        const auto d = detail::elastix_reals(p, "GridDirection", 9);
        // Column-major, as Elastix writes it.
        for (int c = 0; c < 3; ++c)
            for (int r = 0; r < 3; ++r) dir[r][c] = d[3 * c + r];
    }
    if (p.count("GridIndex")) {
        const auto gi = detail::elastix_reals(p, "GridIndex", 3);
        if (gi[0] != 0 || gi[1] != 0 || gi[2] != 0) throw UnsupportedError("elastix: nonzero GridIndex is not supported");
    }
    Index3 dims{};
    for (int a = 0; a < 3; ++a) {
        if (size[a] < 4 || size[a] != std::floor(size[a])) throw ParseError("elastix: GridSize must hold integers >= 4");
        dims[a] = static_cast<int>(size[a]);
    }
    const std::size_t n = 3 * static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    auto params = detail::elastix_reals(p, "TransformParameters", 0);
    if (params.size() != n)
        throw ValidationError("elastix: TransformParameters holds " + std::to_string(params.size()) +
                              " values but GridSize requires " + std::to_string(n));
    if (p.count("NumberOfParameters") && detail::elastix_reals(p, "NumberOfParameters", 1)[0] != static_cast<double>(n))
        throw ValidationError("elastix: NumberOfParameters disagrees with GridSize");

    ElastixImport out{BSplineTransform(dims, {spacing[0], spacing[1], spacing[2]}, {origin[0], origin[1], origin[2]}, dir,
                                       std::move(params)),
                      std::nullopt};
    if (const auto it = p.find("InitialTransformParametersFileName");
        it != p.end() && !it->second.values.empty() && it->second.values.front() != "NoInitialTransform")
        out.initial_transform = it->second.values.front();
    return out;
}

inline ElastixImport parse_elastix_transform(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("elastix: cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return elastix_from_parameters(parse_elastix_parameters(ss.str()));
}

inline std::string elastix_transform_text(const BSplineTransform& T)
{
    std::ostringstream o;
    const auto d = T.grid_dims();
    const auto join3 = [](const auto& a) { return format_real(a[0]) + " " + format_real(a[1]) + " " + format_real(a[2]); };
    o << "(Transform \"BSplineTransform\")\n";
    o << "(NumberOfParameters " << T.num_parameters() << ")\n";
    o << "(TransformParameters";
    for (double c : T.coefficients()) o << " " << format_real(c);
    o << ")\n";
    o << "(InitialTransformParametersFileName \"NoInitialTransform\")\n";
    o << "(HowToCombineTransforms \"Compose\")\n";
    o << "\n// Image specific\n";
    o << "(FixedImageDimension 3)\n(MovingImageDimension 3)\n";
    o << "\n// BSplineTransform specific\n";
    o << "(GridSize " << d[0] << " " << d[1] << " " << d[2] << ")\n";
    o << "(GridIndex 0 0 0)\n";
    o << "(GridSpacing " << join3(T.grid_spacing()) << ")\n";
    o << "(GridOrigin " << join3(T.grid_origin()) << ")\n";
    o << "(GridDirection";
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) o << " " << format_real(T.grid_direction()[r][c]);
    o << ")\n";
    o << "(BSplineTransformSplineOrder 3)\n";
    o << "(UseCyclicTransform \"false\")\n";
    return o.str();
}

inline void write_elastix_transform(const BSplineTransform& T, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("elastix: cannot open '" + path.string() + "' for writing");
    out << elastix_transform_text(T);
    if (!out) throw IoError("elastix: write failed for '" + path.string() + "'");
}

} // namespace sctreg
