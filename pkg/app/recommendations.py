import numpy as np

BIAS_VARIABLES = ("bias_ratio", "bias", "bias_db")
DENSITY_VARIABLES = ("density_ratio", "mean_visible_count")

VARIABLE_LABELS = {
    "bias_ratio": "B₂/B₁",
    "bias": "B",
    "bias_db": "B [dB]",
    "density_ratio": "λ̃₂|Ã₂| / λ̃₁|Ã₁|",
    "mean_visible_count": "visible BSs",
    "altitude_km": "altitude [km]",
    "threshold_db": "T [dB]",
}


def _first_tier(frame):
    tiers = [t for t in dict.fromkeys(frame["tier"]) if t not in ("total", "none")]
    return tiers[0] if tiers else None


def optimal_point(frame, method, scenario=None):
    """Sweep value with the highest total coverage for one method (and scenario)"""
    sub = frame[frame["method"] == method]
    if scenario is not None and "scenario" in sub:
        sub = sub[sub["scenario"] == scenario]
    totals = sub[sub["tier"] == "total"].dropna(subset=["value"])
    if totals.empty:
        return None
    best = totals.loc[totals["value"].idxmax()]
    point = {"sweep_value": float(best["sweep_value"]), "coverage": float(best["value"]),
             "terrestrial_share": float("nan"), "at_edge": False, "spread": 0.0}
    first = _first_tier(sub)
    if first is not None:
        row = sub[(sub["tier"] == first) & (sub["sweep_value"] == best["sweep_value"])]
        if len(row) and best["value"] > 0:
            point["terrestrial_share"] = float(row["value"].iloc[0] / best["value"])
    values = totals["sweep_value"].to_numpy()
    point["at_edge"] = bool(best["sweep_value"] in (values.min(), values.max()) and len(values) > 1)
    point["spread"] = float(totals["value"].max() - totals["value"].min())
    return point


def _scenarios(table):
    return table.scenarios if "scenario" in table.frame else [None]


def _ratio_recommendations(table, kind):
    """Shared read-out for bias and density sweeps"""
    recommendations = []
    label = VARIABLE_LABELS.get(table.variable, table.variable)
    for scenario in _scenarios(table):
        tag = f", {scenario}" if scenario else ""
        for method in table.methods:
            point = optimal_point(table.frame, method, scenario)
            if point is None:
                recommendations.append(f"❌ **{method}{tag}**: no successful cells to compare")
                continue
            share = point["terrestrial_share"]
            share_txt = f", terrestrial share {share:.0%}" if np.isfinite(share) else ""
            recommendations.append(
                f"🎯 **Best {kind} ({method}{tag})**: {label} = {point['sweep_value']:g} "
                f"gives coverage {point['coverage']:.4f}{share_txt}"
            )
            if table.variable in ("bias_ratio", "density_ratio") and point["sweep_value"] == 0:
                recommendations.append("📡 **Terrestrial only**: adding the satellite tier does not "
                                       "raise coverage at this threshold")
            elif point["at_edge"]:
                recommendations.append(f"⬆️ **Edge optimum**: the best {kind} sits at the end of the swept "
                                       "range; extend the sweep")
            if point["spread"] < 0.01:
                recommendations.append(f"➖ **Flat response**: coverage moves by less than 0.01 across "
                                       f"the {kind} sweep")
    return recommendations


def _scenario_comparison(table, kind):
    """Best scenario per threshold when ratios are given as scenarios over a threshold sweep"""
    recommendations = []
    frame = table.frame
    if "scenario" not in frame or len(table.scenarios) < 2:
        return recommendations
    for method in table.methods:
        totals = frame[(frame["method"] == method) & (frame["tier"] == "total")].dropna(subset=["value"])
        if totals.empty:
            continue
        best = totals.loc[totals.groupby("sweep_value")["value"].idxmax()]
        winners = list(dict.fromkeys(best["scenario"]))
        if len(winners) == 1:
            recommendations.append(f"🏆 **{method}**: '{winners[0]}' gives the highest coverage at every "
                                   f"threshold")
        else:
            spans = []
            for name in winners:
                t = best[best["scenario"] == name]["sweep_value"]
                spans.append(f"'{name}' for T ∈ [{t.min():g}, {t.max():g}] dB")
            recommendations.append(f"🔀 **{method}**: the best {kind} depends on T: " + "; ".join(spans))
    return recommendations


def get_bias_recommendations(table):
    """Optimal bias read-out for a coverage table"""
    if table.metric != "coverage":
        return []
    if table.variable in BIAS_VARIABLES:
        return _ratio_recommendations(table, "bias")
    if table.variable == "threshold_db":
        return _scenario_comparison(table, "bias ratio")
    return []


def get_density_recommendations(table):
    """Optimal density read-out for a coverage table"""
    if table.metric != "coverage":
        return []
    if table.variable in DENSITY_VARIABLES:
        return _ratio_recommendations(table, "density")
    if table.variable == "threshold_db":
        return _scenario_comparison(table, "density ratio")
    return []


def get_association_recommendations(table):
    """Trend read-out for association-share tables"""
    recommendations = []
    if table.metric != "association":
        return recommendations
    label = VARIABLE_LABELS.get(table.variable, table.variable)
    frame = table.frame
    first = _first_tier(frame)
    if first is None:
        return recommendations
    for scenario in _scenarios(table):
        tag = f", {scenario}" if scenario else ""
        for method in table.methods:
            sub = frame[(frame["method"] == method) & (frame["tier"] == first)]
            if scenario is not None:
                sub = sub[sub["scenario"] == scenario]
            values = sub.sort_values("sweep_value")["value"].dropna().to_numpy()
            if values.size < 2:
                continue
            steps = np.diff(values)
            if np.all(steps >= -1e-9):
                icon, verb = "📈", "rises"
            elif np.all(steps <= 1e-9):
                icon, verb = "📉", "falls"
            else:
                icon, verb = "〰️", "is not monotone"
            recommendations.append(
                f"{icon} **{first} share ({method}{tag})** {verb} "
                f"with {label}: {values[0]:.3f} → {values[-1]:.3f}"
            )
    return recommendations


def get_recommendations(table):
    """All read-outs that apply to the table"""
    recommendations = []
    if table.variable in BIAS_VARIABLES:
        recommendations.extend(get_bias_recommendations(table))
    elif table.variable in DENSITY_VARIABLES:
        recommendations.extend(get_density_recommendations(table))
    elif table.variable == "threshold_db" and table.metric == "coverage":
        # threshold sweeps carry their ratios as scenarios
        recommendations.extend(_scenario_comparison(table, "scenario"))
    recommendations.extend(get_association_recommendations(table))
    return recommendations
