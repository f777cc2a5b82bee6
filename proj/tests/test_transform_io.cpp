#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "sctreg/transform_io.hpp"
#include "support.hpp"

using namespace sctreg;
namespace fs = std::filesystem;

namespace {

fs::path dir() { static const fs::path d = testsupport::temp_dir("xform"); return d; }

BSplineTransform sample_transform()
{
    Geometry g = testsupport::cube(12, 1.7, {-31.25, 4.5, 0.1});
    g.direction = testsupport::rotation(12, -40);
    BSplineTransform T = BSplineTransform::for_domain(g, {6.5, 7.25, 5.0});
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> U(-2, 2);
    for (double& c : T.coefficients()) c = U(rng) / 3.0;
    return T;
}

void write_text(const fs::path& p, const std::string& s)
{
    std::ofstream out(p);
    out << s;
}

std::string zeros_file(const std::string& order = "3", const std::string& type = "BSplineTransform", int n = 192)
{
    std::string s = "// minimal\n(Transform \"" + type + "\")\n(NumberOfParameters " + std::to_string(n) + ")\n(TransformParameters";
    for (int i = 0; i < n; ++i) s += " 0";
    s += ")\n(GridSize 4 4 4)\n(GridIndex 0 0 0)\n(GridSpacing 10 10 10)\n(GridOrigin -15 -15 -15)\n";
    s += "(GridDirection 1 0 0 0 1 0 0 0 1)\n(BSplineTransformSplineOrder " + order + ")\n";
    return s;
}

} // namespace

TEST(TransformJson, RoundTrip)
{
    const BSplineTransform T = sample_transform();
    const fs::path p = dir() / "t.json";
    save_transform(T, p);
    EXPECT_EQ(load_transform(p), T);
    const auto j = transform_to_json(T);
    EXPECT_EQ(j.at("format_version"), kTransformFormatVersion);
}

TEST(TransformJson, MalformedDocuments)
{
    const fs::path p = dir() / "bad.json";
    write_text(p, "{ not json");
    EXPECT_THROW(load_transform(p), ParseError);
    auto j = transform_to_json(sample_transform());
    j["format_version"] = 99;
    EXPECT_THROW(transform_from_json(j), UnsupportedError);
    j = transform_to_json(sample_transform());
    j.erase("grid_origin");
    EXPECT_THROW(transform_from_json(j), ParseError);
    j = transform_to_json(sample_transform());
    j["coefficients"] = std::vector<double>{1, 2, 3};
    EXPECT_THROW(transform_from_json(j), ValidationError);
}

TEST(Elastix, ZeroParameterFileIsIdentity)
{
    const fs::path p = dir() / "zeros.txt";
    write_text(p, zeros_file());
    const ElastixImport imp = parse_elastix_transform(p);
    EXPECT_TRUE(imp.transform.is_identity());
    EXPECT_FALSE(imp.initial_transform.has_value());
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-30, 30);
    for (int n = 0; n < 1000; ++n) {
        const Vec3 q{U(rng), U(rng), U(rng)};
        EXPECT_EQ(imp.transform.displacement(q), (Vec3{0, 0, 0}));
    }
}

TEST(Elastix, RoundTripLossless)
{
    const BSplineTransform T = sample_transform();
    const fs::path p = dir() / "TransformParameters.0.txt";
    write_elastix_transform(T, p);
    const ElastixImport imp = parse_elastix_transform(p);
    EXPECT_EQ(imp.transform, T);
    write_elastix_transform(imp.transform, dir() / "again.txt");
    std::ifstream a(p), b(dir() / "again.txt");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Elastix, VariantNamesAndInitialTransform)
{
    std::string s = zeros_file("3", "RecursiveBSplineTransform");
    s += "(InitialTransformParametersFileName \"TransformParameters.0.txt\")\n";
    const auto imp = elastix_from_parameters(parse_elastix_parameters(s));
    ASSERT_TRUE(imp.initial_transform.has_value());
    EXPECT_EQ(*imp.initial_transform, "TransformParameters.0.txt");
    EXPECT_NO_THROW(elastix_from_parameters(parse_elastix_parameters(zeros_file("3", "AdvancedBSplineTransform"))));
}

TEST(Elastix, Errors)
{
    EXPECT_THROW(elastix_from_parameters(parse_elastix_parameters(zeros_file("2"))), UnsupportedError);
    EXPECT_THROW(elastix_from_parameters(parse_elastix_parameters(zeros_file("3", "AffineTransform"))), UnsupportedError);
    EXPECT_THROW(elastix_from_parameters(parse_elastix_parameters(zeros_file("3", "BSplineTransform", 191))), ValidationError);
    try {
        parse_elastix_parameters("(Transform \"BSplineTransform\")\n(GridSize 4 4 4)\nGridSpacing 1 1 1)\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    try {
        elastix_from_parameters(parse_elastix_parameters("(Transform \"BSplineTransform\")\n\n(GridSize 4 x 4)\n"));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("GridSize"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_elastix_parameters("(Transform \"open"), ParseError);
    EXPECT_THROW(parse_elastix_transform(dir() / "nope.txt"), IoError);
}

TEST(Elastix, MultiLineEntriesAndComments)
{
    std::string s = "(Transform \"BSplineTransform\") // trailing comment\n(TransformParameters\n";
    for (int i = 0; i < 192; ++i) s += (i % 10 == 9) ? "0.5\n" : "0.5 ";
    s += ")\n(GridSize 4 4 4)\n(GridSpacing 2 2 2)\n(GridOrigin 0 0 0)\n";
    const auto imp = elastix_from_parameters(parse_elastix_parameters(s));
    for (double c : imp.transform.coefficients()) EXPECT_EQ(c, 0.5);
}
