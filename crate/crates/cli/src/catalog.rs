use crate::config::{Experiment, ModelKind};

/// Defining rule of each model kind, written as its rate or mechanism.
pub fn anchor(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Sep => "Eq. η_i(1−η_j)",
        ModelKind::Sep2j => "Eq. η_i(2j−η_j)",
        ModelKind::Sip => "Eq. 2ξ_i(2ξ_j+m)",
        ModelKind::Irw => "Eq. η_i",
        ModelKind::LadderSep => "Eq. η_(i,α)(1−η_(j,β)) on sites × levels",
        ModelKind::Bmp => "Eq. (x_i∂_j − x_j∂_i)²",
        ModelKind::Bep => "Eq. 4z_iz_j(∂_i−∂_j)² − 2m(z_i−z_j)(∂_i−∂_j)",
        ModelKind::Kmp => "instantaneous thermalization",
        ModelKind::DualKmp => "instantaneous thermalization of the dual particles",
        ModelKind::BoundarySep => "Eq. η_i(1−η_j) with reservoirs ρ(1−η), (1−ρ)η",
        ModelKind::BoundarySep2j => "Eq. η_i(2j−η_j) with reservoirs ρ(2j−η), (1−ρ)η",
        ModelKind::BoundaryBep => "Eq. bulk BEP plus heat baths at temperature T",
        ModelKind::DualAbsorbingSep2j => "Eq. η_i(2j−η_j) with absorption into sinks",
        ModelKind::DualAbsorbingSip => "Eq. 2ξ_i(2ξ_j+m) with absorption into sinks",
    }
}

/// One line per model kind, in declaration order.
pub fn catalog() -> String {
    let mut out = String::new();
    for kind in ModelKind::ALL {
        let checks: Vec<&str> = kind.experiments().iter().map(|e: &Experiment| e.name()).collect();
        out.push_str(&format!("{} → {}\n    checks: {}\n", kind.name(), anchor(kind), checks.join(", ")));
    }
    out
}
