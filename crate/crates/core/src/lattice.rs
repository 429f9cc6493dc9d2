//! Finite site graphs with symmetric rate kernels and optional boundary
//! sites, each paired with its own sink.

use std::collections::BTreeMap;

use num::{Signed, Zero};

use crate::error::{Error, Result};
use crate::exact::{int, to_f64, Rational};

/// A boundary site, the sink attached to it and its reservoir parameter
/// (a density ρ for particle models, a temperature T for energy models).
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub site: usize,
    pub sink: usize,
    pub param: Option<Rational>,
}

/// Symmetric nonnegative rate kernel p(i,l) on a finite site set.
///
/// Sinks are numbered `n_sites() + k` for the k-th boundary entry, so they
/// can never collide with a site index.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    names: Vec<String>,
    rates: BTreeMap<(usize, usize), Rational>,
    boundary: Vec<Boundary>,
}

/// Declarative graph description. Edge entries are directed rates p(a,b);
/// a missing reverse entry is mirrored.
#[derive(Debug, Clone, Default)]
pub struct GraphSpec {
    pub sites: Vec<String>,
    pub edges: Vec<(String, String, Rational)>,
    pub boundary: Vec<(String, Option<Rational>)>,
}

impl GraphSpec {
    pub fn chain(n: usize) -> Self {
        let sites: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        let edges = sites.windows(2).map(|w| (w[0].clone(), w[1].clone(), int(1))).collect();
        Self { sites, edges, boundary: Vec::new() }
    }

    pub fn with_boundary(mut self, site: &str, param: Rational) -> Self {
        self.boundary.push((site.to_string(), Some(param)));
        self
    }
}

pub fn build_kernel(spec: &GraphSpec) -> Result<Kernel> {
    let mut index = BTreeMap::new();
    for (i, name) in spec.sites.iter().enumerate() {
        if index.insert(name.as_str(), i).is_some() {
            return Err(Error::DuplicateSite(name.clone()));
        }
    }
    let lookup = |name: &str| index.get(name).copied().ok_or_else(|| Error::UnknownSite(name.into()));

    let mut directed: BTreeMap<(usize, usize), Rational> = BTreeMap::new();
    for (a, b, rate) in &spec.edges {
        let (i, l) = (lookup(a)?, lookup(b)?);
        if rate.is_negative() {
            return Err(Error::NegativeRate { from: a.clone(), to: b.clone(), rate: rate.to_string() });
        }
        if i == l {
            if rate.is_zero() {
                continue;
            }
            return Err(Error::SelfLoop(a.clone()));
        }
        if let Some(prev) = directed.insert((i, l), rate.clone()) {
            if &prev != rate {
                return Err(Error::AsymmetricKernel {
                    a: a.clone(),
                    b: b.clone(),
                    ab: prev.to_string(),
                    ba: rate.to_string(),
                });
            }
        }
    }

    let mut rates = BTreeMap::new();
    for (&(i, l), r) in &directed {
        match directed.get(&(l, i)) {
            Some(back) if back != r => {
                return Err(Error::AsymmetricKernel {
                    a: spec.sites[i].clone(),
                    b: spec.sites[l].clone(),
                    ab: r.to_string(),
                    ba: back.to_string(),
                })
            }
            _ => {}
        }
        if !r.is_zero() {
            rates.insert((i, l), r.clone());
            rates.insert((l, i), r.clone());
        }
    }

    let n = spec.sites.len();
    let mut boundary = Vec::new();
    for (k, (name, param)) in spec.boundary.iter().enumerate() {
        let site = index
            .get(name.as_str())
            .copied()
            .ok_or_else(|| Error::UnknownBoundarySite(name.clone()))?;
        if boundary.iter().any(|b: &Boundary| b.site == site) {
            return Err(Error::DuplicateSite(name.clone()));
        }
        boundary.push(Boundary { site, sink: n + k, param: param.clone() });
    }

    Ok(Kernel { names: spec.sites.clone(), rates, boundary })
}

impl Kernel {
    /// Unit-rate nearest-neighbour chain on `n` sites named "1".."n".
    pub fn chain(n: usize) -> Kernel {
        build_kernel(&GraphSpec::chain(n)).expect("chain spec is valid")
    }

    /// Same kernel with boundary entries replaced.
    pub fn with_boundary(&self, entries: &[(usize, Rational)]) -> Kernel {
        let n = self.n_sites();
        let boundary = entries
            .iter()
            .enumerate()
            .map(|(k, (site, param))| Boundary { site: *site, sink: n + k, param: Some(param.clone()) })
            .collect();
        Kernel { names: self.names.clone(), rates: self.rates.clone(), boundary }
    }

    /// Every rate multiplied by `factor`.
    pub fn scaled(&self, factor: &Rational) -> Kernel {
        let rates = self.rates.iter().map(|(k, r)| (*k, r * factor)).collect();
        Kernel { names: self.names.clone(), rates, boundary: self.boundary.clone() }
    }

    pub fn n_sites(&self) -> usize {
        self.names.len()
    }

    pub fn n_sinks(&self) -> usize {
        self.boundary.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rate(&self, i: usize, l: usize) -> Rational {
        self.rates.get(&(i, l)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn rate_f64(&self, i: usize, l: usize) -> f64 {
        self.rates.get(&(i, l)).map_or(0.0, to_f64)
    }

    /// Unordered bonds `(i, l, p(i,l))` with `i < l` and positive rate.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, &Rational)> + '_ {
        self.rates.iter().filter(|((i, l), _)| i < l).map(|((i, l), r)| (*i, *l, r))
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = (usize, &Rational)> + '_ {
        self.rates.range((i, 0)..(i + 1, 0)).map(|((_, l), r)| (*l, r))
    }

    pub fn boundary(&self) -> &[Boundary] {
        &self.boundary
    }

    pub fn boundary_of(&self, site: usize) -> Option<&Boundary> {
        self.boundary.iter().find(|b| b.site == site)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rates.iter().all(|((i, l), r)| self.rates.get(&(*l, *i)) == Some(r))
    }

    /// Sites from which no boundary site is reachable along positive rates.
    pub fn sites_without_boundary_access(&self) -> Vec<usize> {
        let n = self.n_sites();
        let mut reach = vec![false; n];
        let mut stack: Vec<usize> = self.boundary.iter().map(|b| b.site).collect();
        for &s in &stack {
            reach[s] = true;
        }
        while let Some(s) = stack.pop() {
            for (l, _) in self.neighbours(s) {
                if !reach[l] {
                    reach[l] = true;
                    stack.push(l);
                }
            }
        }
        (0..n).filter(|&i| !reach[i]).collect()
    }

    /// The product graph S × I with `levels` copies of every site; level
    /// `a` of site `i` becomes site `i * levels + a`. Boundary entries are
    /// copied onto every level.
    pub fn ladder(&self, levels: usize) -> Kernel {
        let mut names = Vec::new();
        for name in &self.names {
            for a in 0..levels {
                names.push(format!("{name}.{a}"));
            }
        }
        let mut rates = BTreeMap::new();
        for ((i, l), r) in &self.rates {
            for a in 0..levels {
                for b in 0..levels {
                    rates.insert((i * levels + a, l * levels + b), r.clone());
                }
            }
        }
        let n = names.len();
        let mut boundary = Vec::new();
        for b in &self.boundary {
            for a in 0..levels {
                let k = boundary.len();
                boundary.push(Boundary { site: b.site * levels + a, sink: n + k, param: b.param.clone() });
            }
        }
        Kernel { names, rates, boundary }
    }
}
