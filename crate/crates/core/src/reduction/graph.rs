use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Undirected simple graph on `n_vertices` vertices, optionally with the
/// members of a planted clique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueInstance {
    n_vertices: usize,
    /// Row-major `n × n` adjacency, symmetric with zero diagonal.
    adjacency: Vec<bool>,
    clique: Option<Vec<usize>>,
}

impl CliqueInstance {
    pub fn empty(n_vertices: usize) -> Self {
        CliqueInstance { n_vertices, adjacency: vec![false; n_vertices * n_vertices], clique: None }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn clique(&self) -> Option<&[usize]> {
        self.clique.as_deref()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n_vertices + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        if i == j {
            return;
        }
        let n = self.n_vertices;
        self.adjacency[i * n + j] = present;
        self.adjacency[j * n + i] = present;
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&e| e).count() / 2
    }

    /// Fraction of vertex pairs joined by an edge.
    pub fn edge_density(&self) -> f64 {
        let n = self.n_vertices as f64;
        if self.n_vertices < 2 {
            return 0.0;
        }
        self.edge_count() as f64 / (n * (n - 1.0) / 2.0)
    }

    /// Checks symmetry, the empty diagonal and completeness of the clique.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices;
        for i in 0..n {
            if self.has_edge(i, i) {
                return Err(Error::DegenerateInput(format!("self loop at vertex {i}")));
            }
            for j in 0..i {
                if self.has_edge(i, j) != self.has_edge(j, i) {
                    return Err(Error::DegenerateInput(format!("asymmetric adjacency at ({i}, {j})")));
                }
            }
        }
        if let Some(c) = &self.clique {
            for (a, &i) in c.iter().enumerate() {
                if i >= n {
                    return Err(Error::DegenerateInput(format!("clique vertex {i} out of range")));
                }
                if c[..a].iter().any(|&j| !self.has_edge(i, j)) {
                    return Err(Error::DegenerateInput("clique is not fully connected".into()));
                }
            }
        }
        Ok(())
    }

    /// Writes a text edge list: a `# vertices N` line, an optional
    /// `# clique i j …` line, then one `i j` line per edge with `i < j`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# vertices {}", self.n_vertices)?;
        if let Some(c) = &self.clique {
            let members: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            writeln!(w, "# clique {}", members.join(" "))?;
        }
        for i in 0..self.n_vertices {
            for j in i + 1..self.n_vertices {
                if self.has_edge(i, j) {
                    writeln!(w, "{i} {j}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self> {
        let mut inst: Option<CliqueInstance> = None;
        let mut clique = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match parts.next() {
                    Some("vertices") => {
                        let n: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad vertex count"))?;
                        inst = Some(CliqueInstance::empty(n));
                    }
                    Some("clique") => {
                        let members: std::result::Result<Vec<usize>, _> = parts.map(str::parse).collect();
                        clique = Some(members.map_err(|_| bad("bad clique member"))?);
                    }
                    _ => {}
                }
                continue;
            }
            let g = inst.as_mut().ok_or_else(|| bad("edge before the vertex count"))?;
            let mut parts = line.split_whitespace().map(str::parse::<usize>);
            let (Some(Ok(i)), Some(Ok(j)), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected two vertex indices"));
            };
            if i >= g.n_vertices || j >= g.n_vertices || i == j {
                return Err(bad("edge endpoint out of range"));
            }
            g.set_edge(i, j, true);
        }
        let mut g = inst.ok_or_else(|| Error::Parse("missing vertex count".into()))?;
        g.clique = clique;
        g.validate()?;
        Ok(g)
    }
}

/// Erdős–Rényi graph with edge probability 1/2; with `clique_size`, a
/// uniformly chosen vertex set of that size is then fully connected.
pub fn sample_graph<R: Rng + ?Sized>(
    n_vertices: usize,
    clique_size: Option<usize>,
    rng: &mut R,
) -> Result<CliqueInstance> {
    let mut g = CliqueInstance::empty(n_vertices);
    for i in 0..n_vertices {
        for j in i + 1..n_vertices {
            if rng.random::<bool>() {
                g.set_edge(i, j, true);
            }
        }
    }
    if let Some(k) = clique_size {
        if k > n_vertices {
            return Err(Error::Precondition(format!("clique of size {k} in a graph of {n_vertices} vertices")));
        }
        let members: BTreeSet<usize> = index::sample(rng, n_vertices, k).into_iter().collect();
        let members: Vec<usize> = members.into_iter().collect();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[..a] {
                g.set_edge(i, j, true);
            }
        }
        g.clique = Some(members);
    }
    Ok(g)
}
