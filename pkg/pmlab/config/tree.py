class Declaration:

    def __init__(self, name, values, line=None):
        self.name = name
        self.values = list(values)
        self.line = line

    def __eq__(self, other):
        return isinstance(other, Declaration) and self.name == other.name and self.values == other.values

    def __repr__(self):
        return "Declaration(%r, %r)" % (self.name, self.values)

    @property
    def value(self):
        return self.values[0] if len(self.values) == 1 else self.values


class Block:
    """``name [label] { items }``; items are Declarations and nested Blocks in source order."""

    def __init__(self, name, label=None, items=None, line=None):
        self.name = name
        self.label = label
        self.items = list(items or [])
        self.line = line

    def __eq__(self, other):
        if (
            isinstance(other, Block) and
            self.name == other.name and
            self.label == other.label and
            self.items == other.items
        ):
            return True
        else:
            return False

    def __repr__(self):
        return "Block(%r, %r, %r)" % (self.name, self.label, self.items)

    def declarations(self):
        return {item.name: item for item in self.items if isinstance(item, Declaration)}

    def blocks(self, name=None):
        return [item for item in self.items if isinstance(item, Block) and (name is None or item.name == name)]
