#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <json.hpp>

#include "common.hpp"
#include "graph_topology.hpp"

namespace neuroflow {

/// One arrow per edge at the edge midpoint, pointing along the physical flow
/// phi = -f with length |phi| in location units.
struct QuiverArrow
{
    index_t edge = 0;
    Point2 origin;
    double u = 0.0;
    double v = 0.0;
    double magnitude = 0.0;
};

inline std::vector<QuiverArrow> quiver_arrows(const GraphTopology& g, const Eigen::Ref<const Vector>& f)
{
    require_length(f.size(), g.edge_count(), "quiver flow");
    std::vector<QuiverArrow> out;
    out.reserve(static_cast<std::size_t>(g.edge_count()));
    for (index_t e = 0; e < g.edge_count(); ++e) {
        const Point2& a = g.location(g.edge(e).tail);
        const Point2& b = g.location(g.edge(e).head);
        const double len = distance(a, b);
        const double phi = -f[e];
        QuiverArrow q;
        q.edge = e;
        q.origin = {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
        if (len > 0.0) {
            q.u = (b.x - a.x) / len * phi;
            q.v = (b.y - a.y) / len * phi;
        }
        q.magnitude = std::abs(phi);
        out.push_back(q);
    }
    return out;
}

inline nlohmann::json quiver_json(const GraphTopology& g, const Eigen::Ref<const Vector>& f, const Point2& x_s,
                                  const std::string& field, double at_ms)
{
    nlohmann::json arrows = nlohmann::json::array();
    for (const auto& q : quiver_arrows(g, f))
        arrows.push_back({{"edge", q.edge}, {"x", q.origin.x}, {"y", q.origin.y}, {"u", q.u}, {"v", q.v},
                          {"magnitude", q.magnitude}});
    return {{"field", field}, {"at_ms", at_ms}, {"stimulation", {x_s.x, x_s.y}}, {"arrows", std::move(arrows)}};
}

/// Normalized quiver plot: the longest arrow spans 80% of the shortest edge.
inline std::string quiver_svg(const GraphTopology& g, const Eigen::Ref<const Vector>& f, const Point2& x_s)
{
    const auto arrows = quiver_arrows(g, f);
    double xmin = x_s.x, xmax = x_s.x, ymin = x_s.y, ymax = x_s.y;
    for (const auto& p : g.locations()) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    double pitch = std::numeric_limits<double>::infinity();
    for (const auto& e : g.edges())
        pitch = std::min(pitch, distance(g.location(e.tail), g.location(e.head)));
    if (!std::isfinite(pitch) || pitch <= 0.0)
        pitch = 1.0;
    double top = 0.0;
    for (const auto& q : arrows)
        top = std::max(top, q.magnitude);
    const double margin = pitch;
    const double span = std::max({xmax - xmin, ymax - ymin, pitch}) + 2.0 * margin;
    const double px = 600.0 / span;
    auto sx = [&](double x) { return (x - xmin + margin) * px; };
    auto sy = [&](double y) { return (ymax - y + margin) * px; }; // y up
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };

    const double w = (xmax - xmin + 2.0 * margin) * px;
    const double h = (ymax - ymin + 2.0 * margin) * px;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) +
                      "\" viewBox=\"0 0 " + fmt(w) + " " + fmt(h) + "\">\n";
    svg += "<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\">"
           "<path d=\"M0,0 L6,3 L0,6 z\" fill=\"#1f4e9c\"/></marker></defs>\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& p : g.locations())
        svg += "<circle cx=\"" + fmt(sx(p.x)) + "\" cy=\"" + fmt(sy(p.y)) + "\" r=\"2\" fill=\"#999\"/>\n";
    const double scale = top > 0.0 ? 0.8 * pitch / top : 0.0;
    for (const auto& q : arrows) {
        if (q.magnitude <= 0.0)
            continue;
        const double hx = 0.5 * q.u * scale, hy = 0.5 * q.v * scale;
        svg += "<line x1=\"" + fmt(sx(q.origin.x - hx)) + "\" y1=\"" + fmt(sy(q.origin.y - hy)) + "\" x2=\"" +
               fmt(sx(q.origin.x + hx)) + "\" y2=\"" + fmt(sy(q.origin.y + hy)) +
               "\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" marker-end=\"url(#head)\"/>\n";
    }
    const double c = 0.25 * pitch;
    svg += "<path d=\"M" + fmt(sx(x_s.x - c)) + "," + fmt(sy(x_s.y - c)) + " L" + fmt(sx(x_s.x + c)) + "," +
           fmt(sy(x_s.y + c)) + " M" + fmt(sx(x_s.x - c)) + "," + fmt(sy(x_s.y + c)) + " L" + fmt(sx(x_s.x + c)) +
           "," + fmt(sy(x_s.y - c)) + "\" stroke=\"black\" stroke-width=\"3\"/>\n";
    svg += "</svg>\n";
    return svg;
}

} // namespace neuroflow
