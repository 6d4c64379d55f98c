use std::path::Path;

use super::{differentiate, parse, Expr, ExprError, Var};
use crate::error::{Error, Result};
use crate::nets::VectorField;

/// A vector field given component-wise by expressions, with its divergence
/// derived symbolically.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprField {
    dim: usize,
    components: Vec<Expr>,
    divergence_components: Vec<Expr>,
    label: String,
}

impl ExprField {
    pub fn new(dim: usize, components: Vec<Expr>) -> Result<Self, ExprError> {
        if dim == 0 || components.len() != dim {
            return Err(ExprError::FieldFile(format!(
                "expected {dim} component expressions, got {}",
                components.len()
            )));
        }
        if let Some(e) = components.iter().find(|e| e.min_dim() > dim) {
            return Err(ExprError::FieldFile(format!("`{e}` references a variable beyond d={dim}")));
        }
        let divergence_components = components
            .iter()
            .enumerate()
            .map(|(j, e)| differentiate(e, Var::X(j)))
            .collect();
        Ok(ExprField {
            dim,
            components,
            divergence_components,
            label: "expr".into(),
        })
    }

    pub fn from_sources<S: AsRef<str>>(dim: usize, sources: &[S]) -> Result<Self, ExprError> {
        let components = sources
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse(s.as_ref(), dim).map_err(|e| ExprError::Line {
                    line: i + 1,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ExprField::new(dim, components)
    }

    /// Parses a field definition: a `d=<int>` line followed by one expression per
    /// component. Blank lines and lines starting with `#` are ignored; errors carry
    /// the 1-based line number.
    pub fn parse_definition(text: &str) -> Result<Self, ExprError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (header_line, header) = lines
            .next()
            .ok_or_else(|| ExprError::FieldFile("missing `d=<int>` header".into()))?;
        let dim = header
            .strip_prefix("d")
            .map(str::trim_start)
            .and_then(|s| s.strip_prefix('='))
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| ExprError::Line {
                line: header_line,
                source: Box::new(ExprError::FieldFile(format!("expected `d=<int>`, found `{header}`"))),
            })?;
        let mut components = Vec::with_capacity(dim);
        for (line, src) in lines {
            if components.len() == dim {
                return Err(ExprError::Line {
                    line,
                    source: Box::new(ExprError::FieldFile(format!("more than {dim} component lines"))),
                });
            }
            let e = parse(src, dim).map_err(|e| ExprError::Line {
                line,
                source: Box::new(e),
            })?;
            components.push(e);
        }
        ExprField::new(dim, components)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut f = ExprField::parse_definition(&text)?;
        f.label = path.display().to_string();
        Ok(f)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn divergence_components(&self) -> &[Expr] {
        &self.divergence_components
    }

    /// Canonical definition text, readable by [`ExprField::parse_definition`].
    pub fn to_definition(&self) -> String {
        let mut s = format!("d={}\n", self.dim);
        for c in &self.components {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }
}

impl VectorField for ExprField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        self.label.clone()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x, t)?;
        }
        Ok(())
    }

    fn has_divergence(&self) -> bool {
        true
    }

    fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        let mut s = 0.0;
        for c in &self.divergence_components {
            s += c.eval(x, t)?;
        }
        Ok(s)
    }
}
