use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Grammar, ParseError, ProdId, RuleId};

/// Child indices from the root to a node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        NodePath(v)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_prefix_of(&self, other: &NodePath) -> bool {
        other.0.starts_with(&self.0)
    }

    /// `prefix` followed by this path.
    pub fn under(&self, prefix: &NodePath) -> NodePath {
        let mut v = prefix.0.clone();
        v.extend_from_slice(&self.0);
        NodePath(v)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "/");
        }
        for i in &self.0 {
            write!(f, "/{i}")?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Node {
    rule: RuleId,
    prod: ProdId,
    primitive: bool,
    children: Vec<SyntaxTree>,
    sigma: u32,
    size: u32,
    hash: u64,
}

/// An immutable, structurally shared syntax tree.
///
/// Cloning is cheap; replacing a subtree rebuilds only the path to it.
#[derive(Clone)]
pub struct SyntaxTree(Arc<Node>);

impl SyntaxTree {
    pub(crate) fn assemble(g: &Grammar, prod: ProdId, children: Vec<SyntaxTree>) -> SyntaxTree {
        let p = g.production(prod);
        Self::with_flags(p.context, prod, p.primitive, children)
    }

    fn with_flags(rule: RuleId, prod: ProdId, primitive: bool, children: Vec<SyntaxTree>) -> Self {
        let sigma = primitive as u32 + children.iter().map(|c| c.sigma()).sum::<u32>();
        let size = 1 + children.iter().map(|c| c.size()).sum::<u32>();
        let mut h = DefaultHasher::new();
        prod.hash(&mut h);
        for c in &children {
            c.0.hash.hash(&mut h);
        }
        SyntaxTree(Arc::new(Node {
            rule,
            prod,
            primitive,
            children,
            sigma,
            size,
            hash: h.finish(),
        }))
    }

    /// Builds a node, checking that the children match the production.
    pub fn build(g: &Grammar, prod: ProdId, children: Vec<SyntaxTree>) -> Result<Self, ParseError> {
        let p = g.production(prod);
        if p.child_rules.len() != children.len() {
            return Err(ParseError::Structure(format!(
                "production `{}` takes {} children, got {}",
                g.head_name(prod),
                p.child_rules.len(),
                children.len()
            )));
        }
        for (i, (expected, child)) in p.child_rules.iter().zip(&children).enumerate() {
            if *expected != child.rule() {
                return Err(ParseError::Structure(format!(
                    "child {i} of `{}` must derive `{}`, found `{}`",
                    g.head_name(prod),
                    g.rule_name(*expected),
                    g.rule_name(child.rule())
                )));
            }
        }
        Ok(Self::assemble(g, prod, children))
    }

    /// Production context: the rule this node stands for in its parent.
    pub fn rule(&self) -> RuleId {
        self.0.rule
    }

    pub fn prod(&self) -> ProdId {
        self.0.prod
    }

    pub fn is_primitive(&self) -> bool {
        self.0.primitive
    }

    pub fn children(&self) -> &[SyntaxTree] {
        &self.0.children
    }

    /// Number of primitive nodes in this subtree.
    pub fn sigma(&self) -> u32 {
        self.0.sigma
    }

    /// Number of nodes in this subtree.
    pub fn size(&self) -> u32 {
        self.0.size
    }

    pub fn structural_hash(&self) -> u64 {
        self.0.hash
    }

    pub fn ptr_eq(&self, other: &SyntaxTree) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn subtree(&self, path: &NodePath) -> Option<&SyntaxTree> {
        let mut node = self;
        for &i in &path.0 {
            node = node.0.children.get(i)?;
        }
        Some(node)
    }

    /// Replaces the node at `path`, sharing every untouched subtree.
    /// Returns `None` if the path does not resolve.
    pub fn replace(&self, path: &[usize], replacement: SyntaxTree) -> Option<SyntaxTree> {
        match path.split_first() {
            None => Some(replacement),
            Some((&i, rest)) => {
                let child = self.0.children.get(i)?.replace(rest, replacement)?;
                let mut children = self.0.children.clone();
                children[i] = child;
                Some(Self::with_flags(self.0.rule, self.0.prod, self.0.primitive, children))
            }
        }
    }

    /// All nodes in preorder with their paths.
    pub fn nodes(&self) -> Vec<(NodePath, &SyntaxTree)> {
        fn walk<'a>(t: &'a SyntaxTree, path: &mut Vec<usize>, out: &mut Vec<(NodePath, &'a SyntaxTree)>) {
            out.push((NodePath(path.clone()), t));
            for (i, c) in t.children().iter().enumerate() {
                path.push(i);
                walk(c, path, out);
                path.pop();
            }
        }
        let mut out = Vec::with_capacity(self.size() as usize);
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    /// Recomputes the primitive count from scratch.
    pub fn recount_sigma(&self, g: &Grammar) -> u32 {
        g.production(self.prod()).primitive as u32
            + self.children().iter().map(|c| c.recount_sigma(g)).sum::<u32>()
    }

    /// Canonical text form, e.g. `(+ (Circle 1 2 3) (Circle 4 5 6))`.
    pub fn to_text(&self, g: &Grammar) -> String {
        g.serialize(self).to_text(g)
    }
}

impl PartialEq for SyntaxTree {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other)
            || (self.0.hash == other.0.hash
                && self.0.prod == other.0.prod
                && self.0.children == other.0.children)
    }
}

impl Eq for SyntaxTree {}

impl Hash for SyntaxTree {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.hash.hash(state);
    }
}

impl fmt::Debug for SyntaxTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0.prod.0)?;
        if !self.0.children.is_empty() {
            f.debug_list().entries(self.0.children.iter()).finish()?;
        }
        Ok(())
    }
}
